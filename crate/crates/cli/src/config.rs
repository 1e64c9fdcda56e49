//! Run configuration: a versioned JSON document with every scenario default
//! baked in. Physical inputs are given in operator units (g/cm^3, hours,
//! mm/s^2) and converted here.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use sbreach::dynamics::spin_rate_from_period_hours;
use sbreach::gravity::density_from_g_cm3;
use sbreach::reachability::{PlanOptions, SolverOptions, SweepOptions};
use sbreach::scenario;
use sbreach::shape::ShapeSource;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("config schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
}

/// Built-in bilobed surrogate used when no shape file is configured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surrogate {
    #[default]
    Reduced,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    /// Shape file; the built-in surrogate when absent.
    pub shape: Option<ShapeSource>,
    pub surrogate: Surrogate,
    pub density_g_cm3: f64,
    pub rotation_period_h: f64,
    pub u_m_mm_s2: f64,
    /// Steps per angle of each reachability sweep.
    pub grid: usize,
    pub weights: [f64; 4],
    pub stage_cap: usize,
    pub threshold: f64,
    pub segments: usize,
    /// Tolerances of the shooting integrator.
    pub rtol: f64,
    pub atol: f64,
    /// Tolerance of plain propagation and orbit correction.
    pub propagation_tol: f64,
    pub initial_state: [f64; 6],
    pub target_state: [f64; 6],
    pub output: PathBuf,
    pub cache: Option<PathBuf>,
    pub seed: u64,
    /// Sweep worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverOptions::default();
        let plan = PlanOptions::default();
        Self {
            version: CONFIG_VERSION,
            shape: None,
            surrogate: Surrogate::Reduced,
            density_g_cm3: scenario::DENSITY_G_CM3,
            rotation_period_h: scenario::ROTATION_PERIOD_H,
            u_m_mm_s2: scenario::CONTROL_BOUND_MM_S2,
            grid: plan.grid,
            weights: plan.weights,
            stage_cap: plan.stage_cap,
            threshold: plan.threshold,
            segments: solver.segments,
            rtol: solver.rtol,
            atol: solver.atol,
            propagation_tol: 1e-12,
            initial_state: scenario::X_INITIAL,
            target_state: scenario::X_TARGET,
            output: PathBuf::from("out"),
            cache: None,
            seed: 0,
            threads: 0,
        }
    }
}

fn schema(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parses and validates a JSON document. Whitespace-only input gives
    /// the defaults.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = if text.trim().is_empty() {
            RunConfig::default()
        } else {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de).map_err(|e| {
                let path = e.path().to_string();
                schema(&path, e.into_inner().to_string())
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(schema("version", format!("expected {CONFIG_VERSION}, got {}", self.version)));
        }
        let positive = [
            ("density_g_cm3", self.density_g_cm3),
            ("rotation_period_h", self.rotation_period_h),
            ("threshold", self.threshold),
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("propagation_tol", self.propagation_tol),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(schema(key, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.u_m_mm_s2 >= 0.0 && self.u_m_mm_s2.is_finite()) {
            return Err(schema("u_m_mm_s2", format!("must be non-negative, got {}", self.u_m_mm_s2)));
        }
        for (key, v) in [("grid", self.grid), ("stage_cap", self.stage_cap), ("segments", self.segments)] {
            if v == 0 {
                return Err(schema(key, "must be at least 1"));
            }
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.weights.iter().all(|w| *w == 0.0) {
            return Err(schema("weights", "must be non-negative and not all zero"));
        }
        for (key, s) in [("initial_state", &self.initial_state), ("target_state", &self.target_state)] {
            if s.iter().any(|c| !c.is_finite()) {
                return Err(schema(key, "must be finite"));
            }
        }
        if !(0.5..=10.0).contains(&self.density_g_cm3) {
            log::warn!("density {} g/cm^3 is outside the usual small-body range", self.density_g_cm3);
        }
        if !(1.0..=100.0).contains(&self.rotation_period_h) {
            log::warn!("rotation period {} h is unusual for a small body", self.rotation_period_h);
        }
        Ok(())
    }

    /// Density in kg/km^3.
    pub fn density(&self) -> f64 {
        density_from_g_cm3(self.density_g_cm3)
    }

    /// Spin rate in rad/s.
    pub fn spin_rate(&self) -> f64 {
        spin_rate_from_period_hours(self.rotation_period_h)
    }

    /// Thrust bound in km/s^2.
    pub fn u_m(&self) -> f64 {
        self.u_m_mm_s2 * 1e-6
    }

    pub fn grid_nodes(&self) -> usize {
        self.grid.pow(3)
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            segments: self.segments,
            rtol: self.rtol,
            atol: self.atol,
            ..SolverOptions::default()
        }
    }

    pub fn sweep(&self) -> SweepOptions {
        SweepOptions {
            threads: self.threads,
            solver: self.solver(),
            seed: self.seed,
        }
    }

    pub fn plan(&self) -> PlanOptions {
        PlanOptions {
            stage_cap: self.stage_cap,
            grid: self.grid,
            weights: self.weights,
            u_m: self.u_m(),
            threshold: self.threshold,
            sweep: self.sweep(),
        }
    }
}

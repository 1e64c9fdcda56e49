//! Command-line driver: configuration, orchestration and artifact export.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use nalgebra::Vector3;

pub use commands::{execute, CliError, Command, ErrorKind};
pub use config::{ConfigError, RunConfig, CONFIG_VERSION};

#[derive(Debug, Parser)]
#[command(name = "sbreach", version, about = "Small-body gravity, periodic orbits and reachability-based transfers")]
pub struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true, env = "SBREACH_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true, env = "SBREACH_OUTPUT")]
    pub output: Option<PathBuf>,
    /// Geometry cache directory (overrides the config).
    #[arg(long, global = true, env = "SBREACH_CACHE")]
    pub cache: Option<PathBuf>,
    /// Sweep worker threads, 0 for all cores (overrides the config).
    #[arg(long, global = true, env = "SBREACH_THREADS")]
    pub threads: Option<usize>,
    /// Random seed (overrides the config).
    #[arg(long, global = true, env = "SBREACH_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Check the shape mesh and write a validation report.
    ValidateShape,
    /// Potential, attraction and gravity gradient at one point.
    Gravity {
        /// Body-fixed point `x,y,z` in km.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        point: Vector3<f64>,
    },
    /// Uncontrolled propagation with section crossings.
    Propagate {
        /// Initial state `x,y,z,vx,vy,vz` (km, km/s); the configured initial
        /// state by default.
        #[arg(long, value_parser = parse_state, allow_hyphen_values = true)]
        state: Option<[f64; 6]>,
        /// Propagation span in seconds instead of a crossing count.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value_t = 2)]
        crossings: usize,
    },
    /// Correct the initial and target periodic orbits and write a catalog.
    Periodic,
    /// One reachable-set sweep from the initial orbit.
    Sweep,
    /// Staged transfer from the initial to the target orbit.
    Transfer,
}

fn parse_list<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|p: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", p.len()))
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>, String> {
    parse_list::<3>(s).map(Vector3::from)
}

fn parse_state(s: &str) -> Result<[f64; 6], String> {
    parse_list::<6>(s)
}

impl Cli {
    /// Loads the configuration and applies flag overrides.
    pub fn config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(c) = &self.cache {
            cfg.cache = Some(c.clone());
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn command(&self) -> Command {
        match &self.command {
            CliCommand::ValidateShape => Command::ValidateShape,
            CliCommand::Gravity { point } => Command::Gravity { point: *point },
            CliCommand::Propagate {
                state,
                duration,
                crossings,
            } => Command::Propagate {
                state: *state,
                duration: *duration,
                crossings: *crossings,
            },
            CliCommand::Periodic => Command::Periodic,
            CliCommand::Sweep => Command::Sweep,
            CliCommand::Transfer => Command::Transfer,
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code. The
/// summary goes to stdout; failures print a JSON error object to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let _ = e.print();
            return report(&CliError::usage(e.kind().to_string()));
        }
    };
    let result = cli.config().and_then(|cfg| execute(&cli.command(), &cfg));
    match result {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            0
        }
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> i32 {
    eprintln!("{}", e.to_json());
    e.kind.exit_code()
}

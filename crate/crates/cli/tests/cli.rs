use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use sbreach::shape::primitives::cube;
use sbreach::shape::{to_obj, TriMesh};

fn sbreach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbreach"))
        .args(args)
        .env_remove("SBREACH_CONFIG")
        .env_remove("SBREACH_OUTPUT")
        .env_remove("SBREACH_CACHE")
        .env_remove("SBREACH_THREADS")
        .env_remove("SBREACH_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn write_config(dir: &Path, mesh: &TriMesh, extra: &str) -> String {
    let obj = dir.join("body.obj");
    std::fs::write(&obj, to_obj(mesh)).unwrap();
    let cfg = dir.join("config.json");
    let text = format!(
        r#"{{"shape": {{"format": "obj", "path": {:?}, "unit": "km"}}{extra}}}"#,
        obj.display().to_string()
    );
    std::fs::write(&cfg, text).unwrap();
    cfg.display().to_string()
}

fn path(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn gravity_outside_cube_has_zero_laplacian() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &cube(), "");
    let out = sbreach(&["gravity", "--point", "10,0,0", "--config", &cfg, "--output", &path(&dir.path().join("o"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let lap = v["laplacian"].as_f64().unwrap();
    let gx = v["gradient"][0].as_f64().unwrap();
    assert!(v["potential"].as_f64().unwrap() > 0.0);
    assert!(gx < 0.0, "attraction points toward the body");
    assert!(lap.abs() < 1e-9 * gx.abs(), "{lap:e}");
    assert!(dir.path().join("o/gravity.json").exists());
}

#[test]
fn negative_point_coordinates_parse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &cube(), "");
    let out = sbreach(&["gravity", "--point", "-3,0.5,-1e0", "--config", &cfg, "--output", &path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["point"][0].as_f64(), Some(-3.0));
}

#[test]
fn defective_mesh_fails_validation_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut mesh = cube();
    mesh.faces.pop();
    let cfg = write_config(dir.path(), &mesh, "");
    let outdir = dir.path().join("o");
    let out = sbreach(&["validate-shape", "--config", &cfg, "--output", &path(&outdir)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["exit_code"], 1);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(outdir.join("validation_report.json")).unwrap()).unwrap();
    assert_eq!(report["valid"], false);
    assert!(!report["report"]["issues"].as_array().unwrap().is_empty());

    let good = write_config(dir.path(), &cube(), "");
    let out = sbreach(&["validate-shape", "--config", &good, "--output", &path(&outdir)]);
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["valid"], true);
}

#[test]
fn negative_thrust_bound_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"u_m_mm_s2": -1}"#).unwrap();
    let out = sbreach(&["sweep", "--config", &path(&cfg), "--output", &path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "usage");
    assert!(err["message"].as_str().unwrap().contains("u_m_mm_s2"));
}

#[test]
fn bad_arguments_and_missing_files_map_to_exit_codes() {
    let out = sbreach(&["gravity", "--point", "1,2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = sbreach(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = sbreach(&["periodic", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "io");
    let out = sbreach(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn point_on_the_body_edge_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &cube(), "");
    let out = sbreach(&["gravity", "--point", "0.5,0.5,0", "--config", &cfg, "--output", &path(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn warm_and_cold_cache_give_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let run = |name: &str| {
        let o = dir.path().join(name);
        let out = sbreach(&[
            "propagate",
            "--crossings",
            "1",
            "--cache",
            &path(&cache),
            "--output",
            &path(&o),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(o.join("trajectory.csv")).unwrap()
    };
    let cold = run("cold");
    let entries: Vec<_> = std::fs::read_dir(&cache).unwrap().collect();
    assert_eq!(entries.len(), 1);
    let name = entries[0].as_ref().unwrap().file_name().into_string().unwrap();
    assert!(name.ends_with(".geom") && name.len() == 64 + 5, "{name}");
    let warm = run("warm");
    assert_eq!(cold, warm);
    let uncached = {
        let o = dir.path().join("none");
        let out = sbreach(&["propagate", "--crossings", "1", "--output", &path(&o)]);
        assert!(out.status.success());
        std::fs::read(o.join("trajectory.csv")).unwrap()
    };
    assert_eq!(cold, uncached);
}

#[test]
fn propagate_writes_section_projections() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o");
    let out = sbreach(&["propagate", "--crossings", "2", "--output", &path(&o)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["crossings"], 2);
    let xx = std::fs::read_to_string(o.join("section_xxdot.csv")).unwrap();
    assert_eq!(xx.lines().next(), Some("index,x,xdot"));
    assert_eq!(xx.lines().count(), 3);
    let zz = std::fs::read_to_string(o.join("section_zzdot.csv")).unwrap();
    assert_eq!(zz.lines().next(), Some("index,z,zdot"));
    assert!(o.join("events.csv").exists());
}

#[test]
fn environment_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_sbreach"))
        .args(["propagate", "--duration", "100"])
        .env("SBREACH_OUTPUT", &o)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(o.join("trajectory.csv").exists());
}

#[test]
fn periodic_orbits_close() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o");
    let out = sbreach(&["periodic", "--output", &path(&o)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    for orbit in v["orbits"].as_array().unwrap() {
        assert!(orbit["return_error"].as_f64().unwrap() < 1e-8);
    }
    let catalog = std::fs::read_to_string(o.join("catalog.csv")).unwrap();
    assert_eq!(catalog.lines().count(), 3);
}

/// Single-node sweep and single-stage transfer on the reduced surrogate,
/// each run twice to check byte-identical output.
#[test]
fn small_sweep_and_transfer_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"grid": 1, "stage_cap": 1, "seed": 3}"#).unwrap();
    let run = |cmd: &str, name: &str| {
        let o = dir.path().join(name);
        let out = sbreach(&[cmd, "--config", &path(&cfg), "--output", &path(&o), "--threads", "1"]);
        (out, o)
    };

    let (out, a) = run("sweep", "sweep_a");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["converged_fraction"], 1.0);
    let (_, b) = run("sweep", "sweep_b");
    for f in ["reachable_set.csv", "d_vs_phi.csv", "section_xxdot.csv", "section_zzdot.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let (out, a) = run("transfer", "transfer_a");
    // One stage cannot reach the target orbit: the cap is reported in the
    // manifest and the run still succeeds.
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["stages"], 1);
    assert_eq!(v["status"], "stage_cap_exceeded");
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["stages"][0]["reachable_set_csv"], "stage1_reachable_set.csv");
    let controls = std::fs::read_to_string(a.join("control_history.csv")).unwrap();
    let u_m = manifest["u_m"].as_f64().unwrap();
    for line in controls.lines().skip(1) {
        let norm: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(norm <= u_m * (1.0 + 1e-12), "{norm:e}");
    }
    let (_, b) = run("transfer", "transfer_b");
    for f in [
        "manifest.json",
        "stage1_reachable_set.csv",
        "stage1_trajectory.csv",
        "d_vs_phi_stage1.csv",
        "stage1_section_xxdot.csv",
        "transfer_trajectory.csv",
        "control_history.csv",
    ] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

//! End-to-end checks of the command-line binary: exit codes, artifact
//! emission, output-directory precedence, and byte-level determinism
//! across processes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use veinlab::io::{read_scalar_snapshot, snapshot_to_string};

fn veinlab(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_veinlab"));
    // Isolate from the caller's environment so precedence tests are
    // self-contained.
    cmd.env_remove("VEINLAB_OUT");
    cmd.args(args);
    cmd
}

fn run_ok(args: &[&str]) -> Output {
    let out = veinlab(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_cfg(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn usage_errors_exit_two() {
    // No arguments at all: the argument parser rejects the call.
    let out = veinlab(&[]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Missing config file.
    let out = veinlab(&["--config", "/nonexistent/veinlab.cfg"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Unknown key, reported with its line number.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "mode = verify\nwhatever = 1\n");
    let out = veinlab(&["--config", &cfg]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(":2:") && stderr.contains("whatever"), "{stderr}");

    // Mode override into degiorgi without a ball spec.
    let cfg = write_cfg(dir.path(), "mode = verify\n");
    let out = veinlab(&["--config", &cfg, "--mode", "degiorgi"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Hypothesis violation carries the field name.
    let cfg = write_cfg(dir.path(), "mode = simulate\ngamma = 0.3\n");
    let out = veinlab(&["--config", &cfg]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
}

#[test]
fn simulate_artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("artifacts");
    let cfg = write_cfg(
        dir.path(),
        "mode = simulate\ncells = 12\nt_final = 0.05\ndt = 0.01\nsnapshot_stride = 2\n",
    );
    run_ok(&["--config", &cfg, "--out", out_dir.to_str().unwrap()]);

    let monitor = fs::read_to_string(out_dir.join("monitor.csv")).unwrap();
    let mut lines = monitor.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,sup_grad_p"));
    let n_cols = header.split(',').count();
    let mut rows = 0;
    for line in lines {
        assert_eq!(line.split(',').count(), n_cols, "ragged row: {line}");
        for v in line.split(',') {
            v.parse::<f64>().expect("numeric cell");
        }
        rows += 1;
    }
    assert!(rows >= 6, "expected a record per step, got {rows}");

    // Snapshots re-read through the documented reader, and re-serialize
    // to the same bytes.
    for name in ["p_final.csv", "m1_final.csv", "m2_final.csv", "snap_0000_p.csv"] {
        let path = out_dir.join(name);
        let original = fs::read_to_string(&path).unwrap();
        let field = read_scalar_snapshot(&path).unwrap();
        assert_eq!(snapshot_to_string(&field), original, "{name}");
    }

    let summary = fs::read_to_string(out_dir.join("summary.json")).unwrap();
    assert!(summary.contains("\"completed\": true"));
    let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(parsed["mode"], "simulate");
}

#[test]
fn out_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "mode = mms\ncase = quadratic\ngrids = 8, 16\nout = from-config\n",
    );

    // Environment variable beats the config file.
    let env_dir = dir.path().join("from-env");
    let out = veinlab(&["--config", &cfg])
        .env("VEINLAB_OUT", &env_dir)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(env_dir.join("orders.csv").exists());
    assert!(!dir.path().join("from-config").exists());

    // The flag beats the environment variable.
    let flag_dir = dir.path().join("from-flag");
    let out = veinlab(&["--config", &cfg, "--out", flag_dir.to_str().unwrap()])
        .env("VEINLAB_OUT", dir.path().join("ignored-env"))
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(flag_dir.join("orders.csv").exists());
    assert!(!dir.path().join("ignored-env").exists());
}

#[test]
fn mode_override_switches_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_cfg(
        dir.path(),
        "mode = simulate\ncase = quadratic\ngrids = 8, 16\n",
    );
    run_ok(&[
        "--config",
        &cfg,
        "--mode",
        "mms",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out_dir.join("orders.csv").exists());
    assert!(!out_dir.join("monitor.csv").exists());
}

#[test]
fn starved_solver_aborts_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_cfg(
        dir.path(),
        "mode = simulate\ncells = 16\nt_final = 0.05\nsolver_max_iters = 2\n",
    );
    let out = veinlab(&["--config", &cfg, "--out", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    // The partial record trail and the failure summary still land on disk.
    assert!(out_dir.join("monitor.csv").exists());
    let summary = fs::read_to_string(out_dir.join("summary.json")).unwrap();
    assert!(summary.contains("\"completed\": false"));
    assert!(summary.contains("\"error\""));
}

#[test]
fn identical_runs_are_byte_identical_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "mode = simulate\ncells = 10\nt_final = 0.04\ndt = 0.01\nseed = 9\n",
    );
    let mut captures: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for tag in ["a", "b"] {
        let out_dir = dir.path().join(tag);
        run_ok(&["--config", &cfg, "--out", out_dir.to_str().unwrap()]);
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        captures.push(files);
    }
    assert_eq!(
        captures[0].iter().map(|(n, _)| n).collect::<Vec<_>>(),
        captures[1].iter().map(|(n, _)| n).collect::<Vec<_>>()
    );
    for ((name, a), (_, b)) in captures[0].iter().zip(&captures[1]) {
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn heatpot_mode_emits_scaling_table() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cfg = write_cfg(
        dir.path(),
        "mode = heatpot\ncells = 16\nalpha = 0.5\nt_final = 0.4\nsubsteps = 2\n",
    );
    run_ok(&["--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    let scaling = fs::read_to_string(out_dir.join("scaling.csv")).unwrap();
    let mut lines = scaling.lines();
    assert_eq!(lines.next().unwrap(), "t,sup_grad_u,fitted_exponent");
    let mut last_t = 0.0;
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(cols.len(), 3);
        assert!(cols[0] > last_t, "times must ascend");
        last_t = cols[0];
    }
}

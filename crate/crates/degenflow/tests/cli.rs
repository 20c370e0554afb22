//! End-to-end exercises of the command-line interface: artifact layout,
//! exit codes, and byte-level determinism of repeated runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_degenflow")
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("degenflow_cli_{}_{tag}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_cmd(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("DEGENFLOW_OUT")
        .output()
        .expect("spawn degenflow")
}

fn tiny_config(name: &str) -> String {
    format!(
        "
[experiment]
name = {name}
seed = 11
checks = structure, mass, boundary_guard

[exponents]
n = 1
m = 2.0
beta = 1.0
lambda = 1.0

[coupler]
kind = sum

[flux]
kind = identity

[drift]
kind = none

[grid]
extent = -2.0, 2.0
cells = 128
bc = zero_flux

[solver]
t_end = 0.02
snapshot_interval = 0.005
clip_negative = false

[initial]
kind = bump
center = 0.0
radius = 0.5
height = 0.6

[diagnostic]
kind = mass_series
"
    )
}

#[test]
fn help_and_unknown_subcommand() {
    let out = run_cmd(&["help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("usage:"));

    let out = run_cmd(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn preset_prints_and_emits() {
    let out = run_cmd(&["preset", "thm12_mass_m1"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[exponents]"));
    assert!(text.contains("m = 1.0"));

    let out = run_cmd(&["preset", "no_such_preset"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("thm14_mass_singular"));

    let dir = scratch("emit");
    let file = dir.join("p.cfg");
    let out = run_cmd(&[
        "preset",
        "oracle_convergence",
        "--emit-config",
        file.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(file.exists());
    let out = run_cmd(&["validate", file.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn run_produces_artifacts_and_report_reads_them() {
    let dir = scratch("artifacts");
    let cfg = dir.join("tiny.cfg");
    fs::write(&cfg, tiny_config("tiny_run")).unwrap();
    let out_root = dir.join("out");
    let out = run_cmd(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out_root.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stdout: {} stderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    let run_dir = out_root.join("tiny_run");
    for artifact in [
        "config.txt",
        "meta.json",
        "snap_0.csv",
        "ledger.csv",
        "summary.json",
        "summary.txt",
        "validation.json",
    ] {
        assert!(run_dir.join(artifact).exists(), "{artifact} missing");
    }
    assert!(run_dir.join("diagnostics/mass_series_0.csv").exists());

    let out = run_cmd(&["report", run_dir.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS"), "{text}");

    // A trajectory compared against itself has zero error.
    let out = run_cmd(&[
        "compare",
        run_dir.to_str().unwrap(),
        run_dir.to_str().unwrap(),
        "--norm",
        "linf",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.lines()
            .last()
            .unwrap()
            .contains("0.0000000000000000e0"),
        "{text}"
    );
}

#[test]
fn t_end_zero_yields_single_snapshot_run() {
    let dir = scratch("tzero");
    let cfg = dir.join("tiny.cfg");
    fs::write(
        &cfg,
        tiny_config("tzero_run").replace("t_end = 0.02", "t_end = 0.0"),
    )
    .unwrap();
    let out = run_cmd(&["run", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run_dir = dir.join("tzero_run");
    let meta: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["times"].as_array().unwrap().len(), 1);
    let series = fs::read_to_string(run_dir.join("diagnostics/mass_series_0.csv")).unwrap();
    assert_eq!(series.lines().count(), 2, "header + one entry: {series}");
}

#[test]
fn drift_exponent_out_of_range_exits_3() {
    let dir = scratch("qgate");
    let cfg = dir.join("q.cfg");
    // m = 1, beta* = 1: the admissible interval ends at (n+2)/n = 3 in 1-D;
    // q above it must be rejected as a regime violation.
    let text = tiny_config("q_run")
        .replace("m = 2.0", "m = 1.0")
        .replace("beta = 1.0", "beta = 1.0\nq = 5.0")
        .replace(
            "[drift]\nkind = none",
            "[drift]\nkind = power\ncoeff = 1.0\nq = 5.0",
        );
    fs::write(&cfg, text).unwrap();
    let out = run_cmd(&["run", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("admissible range"));
}

#[test]
fn identical_config_and_seed_give_byte_identical_outputs() {
    let dir = scratch("determinism");
    let cfg = dir.join("tiny.cfg");
    fs::write(&cfg, tiny_config("det_run")).unwrap();
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out_root in [&out_a, &out_b] {
        let out = run_cmd(&[
            "run",
            cfg.to_str().unwrap(),
            "--out",
            out_root.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let read = |root: &Path, name: &str| fs::read(root.join("det_run").join(name)).unwrap();
    for name in [
        "ledger.csv",
        "snap_0.csv",
        "snap_2.csv",
        "meta.json",
        "summary.json",
    ] {
        assert_eq!(
            read(&out_a, name),
            read(&out_b, name),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = scratch("cfg_err");
    let cfg = dir.join("bad.cfg");
    fs::write(&cfg, "[experiment]\nname = x\nnot a line\n").unwrap();
    let out = run_cmd(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = run_cmd(&["run", dir.join("missing.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn structure_failure_exits_3() {
    let dir = scratch("struct_err");
    let cfg = dir.join("flip.cfg");
    // A backwards flux violating coercivity: A.p = -|p|^2 < c |p|^2.
    let text = tiny_config("flip_run").replace(
        "[flux]\nkind = identity",
        "[flux]\nkind = scaled_rotated\nscale = -1.0\nskew = 0.0\nc = 0.5",
    );
    fs::write(&cfg, text).unwrap();
    let out = run_cmd(&["run", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn blowup_exits_4_and_leaves_partial_trajectory() {
    let dir = scratch("blowup");
    let cfg = dir.join("blow.cfg");
    // Understate C3 with validation waived: the step-size control then
    // violates the true stability bound and the run must abort cleanly.
    let text = tiny_config("blow_run")
        .replace(
            "[flux]\nkind = identity",
            "[flux]\nkind = scaled_rotated\nscale = 50.0\nskew = 0.0\nc = 1.0\nc3 = 0.01",
        )
        .replace(
            "checks = structure, mass, boundary_guard",
            "waive_structure = true",
        );
    fs::write(&cfg, text).unwrap();
    let out = run_cmd(&["run", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "stdout: {} stderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    // Partial artifacts: at least the initial snapshot and a meta listing.
    let run_dir = dir.join("blow_run");
    assert!(run_dir.join("snap_0.csv").exists());
    assert!(run_dir.join("meta.json").exists());
}

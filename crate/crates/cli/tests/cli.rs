//! End-to-end tests of the binary: exit codes, output files, and
//! byte-identity of reports across thread counts.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_orthant")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("orthant-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn missing_config_is_usage_error() {
    let out = Command::new(bin())
        .args(["check", "--config", "/nonexistent/nope.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = tmp_dir("badkey");
    let cfg = dir.join("run.toml");
    write(
        &cfg,
        r#"
master_seed = 1
typo_key = true

[model]
name = "bessel1d"
c = 4.0
"#,
    );
    let out = Command::new(bin())
        .args(["check", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("typo_key"), "stderr: {err}");
}

#[test]
fn check_passes_on_reference_model() {
    let dir = tmp_dir("checkpass");
    let cfg = dir.join("run.toml");
    write(
        &cfg,
        &format!(
            r#"
master_seed = 1
output_dir = "{}"

[model]
name = "multicir"
n = 2
mu = ["3.0", "3.0"]

[check]
sigma_tilde = "sqrt(x1)"
"#,
            dir.join("out").display()
        ),
    );
    let out = Command::new(bin()).args(["check", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let report = std::fs::read_to_string(dir.join("out/check_report.json")).unwrap();
    assert!(report.starts_with("{\n  \"format_version\": 1"));
    assert!(report.contains("\"verdict\": \"pass\""));
    assert!(std::fs::metadata(dir.join("out/manifest.json")).is_ok());
}

#[test]
fn check_fails_on_weak_drift_variant() {
    let dir = tmp_dir("checkfail");
    let cfg = dir.join("run.toml");
    write(
        &cfg,
        &format!(
            r#"
master_seed = 1
output_dir = "{}"

[model]
name = "multicir"
n = 2
mu = ["0.1", "0.1"]

[check]
checks = ["boundary_drift"]
"#,
            dir.join("out").display()
        ),
    );
    let out = Command::new(bin()).args(["check", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let report = std::fs::read_to_string(dir.join("out/check_report.json")).unwrap();
    assert!(report.contains("\"verdict\": \"fail\""));
    assert!(report.contains("\"witnesses\""));
}

#[test]
fn classify_ball_dominating_is_unattainable() {
    let dir = tmp_dir("classify");
    let cfg = dir.join("run.toml");
    write(
        &cfg,
        &format!(
            r#"
output_dir = "{}"

[classify]
diffusion = "ball_dominating"
n = 2
kappa = 2.0
endpoint = "upper"
"#,
            dir.join("out").display()
        ),
    );
    let out = Command::new(bin()).args(["classify", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let report = std::fs::read_to_string(dir.join("out/boundary_verdict.json")).unwrap();
    assert!(report.contains("\"classification\": \"unattainable\""));
}

#[test]
fn outputs_are_byte_identical_across_thread_counts() {
    let dir = tmp_dir("repro");
    let cfg = dir.join("run.toml");
    write(
        &cfg,
        r#"
master_seed = 77

[model]
name = "multicir"
n = 2
mu = ["3.0", "3.0"]

[mc]
x0 = [1.0, 1.0]
t = 0.5
dt = 0.01
paths = 400
checkpoints = [0.25, 0.5]
eps_hit = 1e-3

[simulate]
x0 = [1.0, 1.0]
t = 0.5
dt = 0.01
"#,
    );
    let mut outputs: Vec<(String, String)> = Vec::new();
    for threads in ["1", "2"] {
        let out_dir = dir.join(format!("out{threads}"));
        for cmd in ["mc", "simulate"] {
            let out = Command::new(bin())
                .args([cmd, "--config"])
                .arg(&cfg)
                .args(["--threads", threads, "--output-dir"])
                .arg(&out_dir)
                .output()
                .unwrap();
            assert_eq!(out.status.code(), Some(0), "{cmd}: {out:?}");
        }
        let mc = std::fs::read_to_string(out_dir.join("mc_summary.json")).unwrap();
        let traj = std::fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
        outputs.push((mc, traj));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "mc_summary.json differs across thread counts");
    assert_eq!(outputs[0].1, outputs[1].1, "trajectory.csv differs across thread counts");
}

#[test]
fn trajectory_csv_has_version_header_and_17_digits() {
    let dir = tmp_dir("traj");
    let cfg = dir.join("run.toml");
    write(
        &cfg,
        &format!(
            r#"
master_seed = 3
output_dir = "{}"

[model]
name = "bessel1d"
c = 4.0

[simulate]
x0 = [1.0]
t = 0.25
dt = 0.25
"#,
            dir.join("out").display()
        ),
    );
    let out = Command::new(bin()).args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let csv = std::fs::read_to_string(dir.join("out/trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "# format-version: 1");
    assert_eq!(lines.next().unwrap(), "t,x1");
    let first = lines.next().unwrap();
    assert_eq!(first, "0.0000000000000000e0,1.0000000000000000e0");
}

#[test]
fn dt_flag_overrides_config() {
    let dir = tmp_dir("dtflag");
    let cfg = dir.join("run.toml");
    write(
        &cfg,
        &format!(
            r#"
output_dir = "{}"

[model]
name = "bessel1d"
c = 4.0

[simulate]
x0 = [1.0]
t = 1.0
dt = 0.5
"#,
            dir.join("out").display()
        ),
    );
    let out = Command::new(bin())
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--dt", "0.25"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let csv = std::fs::read_to_string(dir.join("out/trajectory.csv")).unwrap();
    // 4 steps + header lines
    assert_eq!(csv.lines().count(), 2 + 5);
    // and the manifest echoes the resolved dt
    let manifest = std::fs::read_to_string(dir.join("out/manifest.json")).unwrap();
    assert!(manifest.contains("\"dt\": 0.25"), "{manifest}");
}

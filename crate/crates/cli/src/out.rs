//! Output writers: versioned JSON reports, 17-significant-digit CSV, and the
//! run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use orthant_core::comparison::CouplingReport;
use orthant_core::modulus::ModulusLadder;
use orthant_core::paths::Trajectory;

pub const FORMAT_VERSION: u32 = 1;

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_json<T: Serialize>(path: &Path, body: &T) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Versioned<'a, T> {
        format_version: u32,
        #[serde(flatten)]
        body: &'a T,
    }
    let text = serde_json::to_string_pretty(&Versioned { format_version: FORMAT_VERSION, body })
        .expect("report serialization cannot fail");
    fs::write(path, text + "\n")
}

#[derive(Serialize)]
pub struct RuntimeBlock {
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub threads: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format_version: u32,
    command: &'a str,
    config: &'a RunConfig,
    runtime: RuntimeBlock,
}

/// The manifest echoes the resolved config; volatile facts (start time,
/// wall time, effective thread count) live only in its `runtime` block.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    config: &RunConfig,
    runtime: RuntimeBlock,
) -> std::io::Result<()> {
    let manifest = Manifest { format_version: FORMAT_VERSION, command, config, runtime };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail");
    fs::write(dir.join("manifest.json"), text + "\n")
}

pub fn ensure_dir(dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> std::io::Result<()> {
    let mut text = String::with_capacity(traj.len() * traj.n * 26);
    text.push_str(&format!("# format-version: {FORMAT_VERSION}\n"));
    text.push('t');
    for i in 1..=traj.n {
        text.push_str(&format!(",x{i}"));
    }
    text.push('\n');
    for m in 0..traj.len() {
        text.push_str(&fmt17(traj.time(m)));
        for v in traj.state(m) {
            text.push(',');
            text.push_str(&fmt17(*v));
        }
        text.push('\n');
    }
    fs::write(path, text)
}

pub fn write_coupling_csv(path: &Path, report: &CouplingReport) -> std::io::Result<()> {
    let mut text = String::with_capacity(report.p_of_y.len() * 60);
    text.push_str(&format!("# format-version: {FORMAT_VERSION}\nt,p,z\n"));
    for (m, (p, z)) in report.p_of_y.iter().zip(&report.z).enumerate() {
        text.push_str(&fmt17(m as f64 * report.dt));
        text.push(',');
        text.push_str(&fmt17(*p));
        text.push(',');
        text.push_str(&fmt17(*z));
        text.push('\n');
    }
    fs::write(path, text)
}

/// `sk.csv` holds the ladder sequence; `phi_grid.csv` holds `phi_k` sampled
/// on a symmetric grid, one column per level.
pub fn write_modulus_csvs(
    dir: &Path,
    ladder: &ModulusLadder,
    grid_max: f64,
    grid_points: usize,
) -> std::io::Result<(PathBuf, PathBuf)> {
    let sk_path = dir.join("sk.csv");
    let mut text = format!("# format-version: {FORMAT_VERSION}\nk,s_k\n");
    for (k, s) in ladder.s().iter().enumerate() {
        text.push_str(&format!("{k},{}\n", fmt17(*s)));
    }
    fs::write(&sk_path, text)?;

    let phi_path = dir.join("phi_grid.csv");
    let mut text = format!("# format-version: {FORMAT_VERSION}\nt");
    for k in 1..=ladder.k_max() {
        text.push_str(&format!(",phi_{k}"));
    }
    text.push('\n');
    for i in 0..grid_points {
        let t = -grid_max + 2.0 * grid_max * i as f64 / (grid_points - 1) as f64;
        text.push_str(&fmt17(t));
        for k in 1..=ladder.k_max() {
            text.push(',');
            text.push_str(&fmt17(ladder.phi(k, t)));
        }
        text.push('\n');
    }
    fs::write(&phi_path, text)?;
    Ok((sk_path, phi_path))
}

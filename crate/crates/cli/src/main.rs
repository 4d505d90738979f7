//! `orthant`: simulate degenerate SDEs, audit their structural assumptions,
//! run comparison couplings, and classify one-dimensional boundaries.
//!
//! Every subcommand reads one TOML config file and writes its outputs plus a
//! run manifest into the output directory. Exit codes: 0 success, 1 a check
//! or verdict failed, 2 usage/config error, 3 numerical abort.

mod config;
mod out;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{CheckConfig, CheckKind, EndpointChoice, RunConfig};
use orthant_core::boundary::{BoundaryError, BoundaryVerdict, Classification, Diffusion1D, EndpointSide};
use orthant_core::comparison::{couple, ComparisonError, CoupleOptions, CouplingVerdict};
use orthant_core::conditions::{self, BoundaryDriftOptions, ConditionReport, ConditionsError, SliceCoord};
use orthant_core::expr::{self, ExprError};
use orthant_core::model::{build_model, Domain, Model, ModelError, Theta};
use orthant_core::modulus::{Modulus, ModulusError, ModulusLadder};
use orthant_core::paths::{self, McParams, PathsError, UniquenessParams};

#[derive(Parser)]
#[command(name = "orthant", version, about = "Degenerate SDE simulation and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Path to the TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory (default: config, then $ORTHANT_OUT_DIR, then `.`).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads (0 = library default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the time step of the invoked command.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Override the path count of the invoked command.
    #[arg(long, global = true)]
    paths: Option<usize>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Integrate a single trajectory and write it as CSV.
    Simulate,
    /// Monte Carlo over independent paths.
    Mc,
    /// Audit the structural assumptions of the model.
    Check,
    /// Run the domination coupling and audit the ordering.
    Compare,
    /// Classify the endpoints of a one-dimensional diffusion.
    Classify,
    /// Build a modulus ladder and dump its tables.
    Modulus,
    /// Same-noise gap study across dyadic refinements.
    Uniqueness,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Mc => "mc",
            Command::Check => "check",
            Command::Compare => "compare",
            Command::Classify => "classify",
            Command::Modulus => "modulus",
            Command::Uniqueness => "uniqueness",
        }
    }
}

enum CliError {
    /// Bad invocation or configuration: exit 2.
    Usage(String),
    /// Check or verdict failure: exit 1.
    Verdict(String),
    /// Numerical abort: exit 3.
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Verdict(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Verdict(m) | CliError::Numeric(m) => m,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("i/o error: {e}"))
    }
}

impl From<ExprError> for CliError {
    fn from(e: ExprError) -> Self {
        match e {
            ExprError::Domain { .. } | ExprError::DimensionMismatch { .. } => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Expr(inner) => inner.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<PathsError> for CliError {
    fn from(e: PathsError) -> Self {
        match e {
            PathsError::InvalidParameter { .. } => CliError::Usage(e.to_string()),
            PathsError::Model(m) => m.into(),
            PathsError::NonFiniteState { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<ConditionsError> for CliError {
    fn from(e: ConditionsError) -> Self {
        match e {
            ConditionsError::InvalidParameter { .. } | ConditionsError::MissingSigmaTilde => {
                CliError::Usage(e.to_string())
            }
            ConditionsError::Model(m) => m.into(),
            ConditionsError::DegenerateSlice { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<ModulusError> for CliError {
    fn from(e: ModulusError) -> Self {
        match e {
            ModulusError::InvalidModulus { .. } => CliError::Usage(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<BoundaryError> for CliError {
    fn from(e: BoundaryError) -> Self {
        match e {
            BoundaryError::InvalidDiffusion { .. } => CliError::Usage(e.to_string()),
            BoundaryError::Quadrature(q) => CliError::Numeric(q.to_string()),
        }
    }
}

impl From<ComparisonError> for CliError {
    fn from(e: ComparisonError) -> Self {
        match e {
            ComparisonError::PreconditionFailed { .. } => CliError::Verdict(e.to_string()),
            ComparisonError::Paths(p) => p.into(),
            ComparisonError::Conditions(c) => c.into(),
            ComparisonError::Model(m) => m.into(),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("orthant: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);

    let config_path = cli.config.as_ref().ok_or_else(|| usage("--config <file> is required"))?;
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", config_path.display())))?;
    let mut config: RunConfig =
        toml::from_str(&text).map_err(|e| usage(format!("config error: {e}")))?;

    // flag overrides (threads stays out of the echoed config; it is a
    // runtime fact and must not perturb byte-identity of reports)
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = Some(dir.display().to_string());
    }
    apply_overrides(cli, &mut config)?;

    let threads = cli.threads.unwrap_or(config.threads);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| usage(format!("thread pool: {e}")))?;
    }

    let out_dir: PathBuf = config
        .output_dir
        .clone()
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("ORTHANT_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    out::ensure_dir(&out_dir)?;

    // manifest first, so it exists even if the run aborts; rewritten with
    // the measured wall time at the end
    let write_manifest = |wall: f64| {
        out::write_manifest(
            &out_dir,
            cli.command.name(),
            &config,
            out::RuntimeBlock { started_unix, wall_seconds: wall, threads },
        )
    };
    write_manifest(0.0)?;

    let result = dispatch(cli.command, &config, &out_dir);
    write_manifest(started.elapsed().as_secs_f64())?;
    result
}

fn apply_overrides(cli: &Cli, config: &mut RunConfig) -> Result<(), CliError> {
    if let Some(dt) = cli.dt {
        match cli.command {
            Command::Simulate => {
                config.simulate.as_mut().ok_or_else(|| usage("no [simulate] section"))?.dt = dt
            }
            Command::Mc => config.mc.as_mut().ok_or_else(|| usage("no [mc] section"))?.dt = dt,
            Command::Compare => {
                config.compare.as_mut().ok_or_else(|| usage("no [compare] section"))?.dt = dt
            }
            Command::Uniqueness => {
                config.uniqueness.as_mut().ok_or_else(|| usage("no [uniqueness] section"))?.dt = dt
            }
            _ => return Err(usage("--dt does not apply to this command")),
        }
    }
    if let Some(paths) = cli.paths {
        match cli.command {
            Command::Mc => config.mc.as_mut().ok_or_else(|| usage("no [mc] section"))?.paths = paths,
            Command::Uniqueness => {
                config.uniqueness.as_mut().ok_or_else(|| usage("no [uniqueness] section"))?.paths = paths
            }
            _ => return Err(usage("--paths does not apply to this command")),
        }
    }
    Ok(())
}

fn require_model(config: &RunConfig) -> Result<Model, CliError> {
    let spec = config.model.as_ref().ok_or_else(|| usage("config needs a [model] section"))?;
    Ok(build_model(spec)?)
}

fn dispatch(command: Command, config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    match command {
        Command::Simulate => cmd_simulate(config, out_dir),
        Command::Mc => cmd_mc(config, out_dir),
        Command::Check => cmd_check(config, out_dir),
        Command::Compare => cmd_compare(config, out_dir),
        Command::Classify => cmd_classify(config, out_dir),
        Command::Modulus => cmd_modulus(config, out_dir),
        Command::Uniqueness => cmd_uniqueness(config, out_dir),
    }
}

fn cmd_simulate(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let model = require_model(config)?;
    let sim = config.simulate.as_ref().ok_or_else(|| usage("config needs a [simulate] section"))?;
    let result = paths::simulate(
        &model,
        &sim.x0,
        sim.t,
        sim.dt,
        sim.scheme,
        sim.boundary_policy,
        sim.eps_hit,
        config.master_seed,
        sim.path_index,
    );
    let csv = out_dir.join("trajectory.csv");
    match result {
        Ok(traj) => {
            out::write_trajectory_csv(&csv, &traj)?;
            println!(
                "simulate: {} grid points, first hit {:?} -> {}",
                traj.len(),
                traj.first_hit(),
                csv.display()
            );
            Ok(())
        }
        Err(PathsError::NonFiniteState { step, partial }) => {
            out::write_trajectory_csv(&csv, &partial)?;
            Err(CliError::Numeric(format!(
                "non-finite state at step {step}; partial trajectory written to {}",
                csv.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_mc(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let model = require_model(config)?;
    let mc = config.mc.as_ref().ok_or_else(|| usage("config needs an [mc] section"))?;
    let params = McParams {
        x0: mc.x0.clone(),
        t: mc.t,
        dt: mc.dt,
        paths: mc.paths,
        scheme: mc.scheme,
        checkpoints: if mc.checkpoints.is_empty() { vec![mc.t] } else { mc.checkpoints.clone() },
        eps_hit: mc.eps_hit,
        master_seed: config.master_seed,
    };
    let summary = paths::monte_carlo(&model, &params)?;
    let path = out_dir.join("mc_summary.json");
    out::write_json(&path, &summary)?;
    println!(
        "mc: {} paths ({} failed), any-hit fraction {:.4} -> {}",
        summary.paths,
        summary.failed_paths,
        summary.any_hit_fraction,
        path.display()
    );
    Ok(())
}

fn parse_modulus(name: &str, epsilon: Option<f64>) -> Result<Modulus, CliError> {
    let m = match name {
        "sqrt" => Modulus::sqrt(),
        "linear" => Modulus::linear(),
        other => {
            if let Some(p) = other.strip_prefix("power:") {
                let p: f64 = p.parse().map_err(|_| usage(format!("bad power modulus `{other}`")))?;
                Modulus::power(p)?
            } else {
                // arbitrary modulus as an expression in x1
                Modulus::from_expr(other, expr::parse(other, 1)?)
            }
        }
    };
    Ok(match epsilon {
        Some(eps) => m.with_epsilon(eps),
        None => m,
    })
}

fn default_checks(model: &Model, spec: &CheckConfig) -> Vec<CheckKind> {
    if let Some(list) = &spec.checks {
        return list.clone();
    }
    let mut checks = vec![CheckKind::DiffusionModulus, CheckKind::LinearGrowth];
    if model.domain() == Domain::PositiveOrthant {
        checks.push(CheckKind::BoundaryDrift);
    }
    if model.domain() == Domain::UnitBall {
        checks.push(CheckKind::UnitBall);
    }
    checks
}

fn cmd_check(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let model = require_model(config)?;
    let spec = config.check.as_ref().ok_or_else(|| usage("config needs a [check] section"))?;
    let mut reports: Vec<ConditionReport> = Vec::new();
    for kind in default_checks(&model, spec) {
        match kind {
            CheckKind::DiffusionModulus => {
                let modulus = parse_modulus(&spec.rho, spec.epsilon)?;
                reports.push(conditions::check_diffusion_modulus(
                    &model,
                    &modulus,
                    spec.box_bound,
                    spec.pairs,
                    config.master_seed,
                )?);
            }
            CheckKind::BoundaryDrift => {
                let grid = conditions::uniform_r_grid(spec.box_bound / 2.0, spec.r_points);
                let envelopes: Result<Vec<_>, ConditionsError> = (0..model.dim())
                    .map(|i| {
                        conditions::envelope(
                            &model,
                            SliceCoord::Axis(i),
                            &grid,
                            spec.box_bound,
                            spec.samples_per_slice,
                            config.master_seed,
                        )
                    })
                    .collect();
                let sigma_tilde = spec
                    .sigma_tilde
                    .as_ref()
                    .map(|s| expr::parse(s, 1))
                    .transpose()?;
                let opts = BoundaryDriftOptions {
                    delta: spec.delta,
                    box_bound: spec.box_bound,
                    band_samples: spec.band_samples,
                    sigma_tilde,
                    require_cap: false,
                    seed: config.master_seed,
                };
                reports.push(conditions::check_boundary_drift(&model, &envelopes?, &opts)?);
            }
            CheckKind::LinearGrowth => {
                for field in [conditions::FieldRef::Mu, conditions::FieldRef::Sigma] {
                    reports.push(conditions::check_linear_growth(
                        &model,
                        field,
                        &spec.growth_radii,
                        spec.growth_samples,
                        config.master_seed,
                    )?);
                }
            }
            CheckKind::UnitBall => {
                let ms = config.model.as_ref().expect("model checked above");
                let c = ms.c.ok_or_else(|| usage("unit_ball check requires model.c"))?;
                let theta = match (&ms.theta_vec, ms.theta) {
                    (Some(v), _) => Theta::Vector(v.clone()),
                    (None, t) => Theta::Scalar(t.unwrap_or(0.0)),
                };
                reports.push(conditions::check_unit_ball_condition(c, &theta, model.dim()));
            }
        }
    }
    #[derive(Serialize)]
    struct CheckReportFile<'a> {
        reports: &'a [ConditionReport],
    }
    let path = out_dir.join("check_report.json");
    out::write_json(&path, &CheckReportFile { reports: &reports })?;
    let mut failed = 0usize;
    for r in &reports {
        println!("check {}: {:?} (margin {:.6})", r.assumption, r.verdict, r.margin);
        if !r.passed() {
            failed += 1;
        }
    }
    println!("check report -> {}", path.display());
    if failed > 0 {
        return Err(CliError::Verdict(format!("{failed} check(s) did not pass")));
    }
    Ok(())
}

fn parse_coord(s: &str, model: &Model) -> Result<SliceCoord, CliError> {
    if s == "radial" {
        return Ok(SliceCoord::Radial);
    }
    if let Some(rest) = s.strip_prefix('x') {
        if let Ok(i) = rest.parse::<usize>() {
            if i >= 1 && i <= model.dim() {
                return Ok(SliceCoord::Axis(i - 1));
            }
        }
    }
    Err(usage(format!("bad coord `{s}`: use `x1`..`x{}` or `radial`", model.dim())))
}

fn cmd_compare(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let model = require_model(config)?;
    let spec = config.compare.as_ref().ok_or_else(|| usage("config needs a [compare] section"))?;
    let coord = parse_coord(&spec.coord, &model)?;
    let opts = CoupleOptions {
        scheme: spec.scheme,
        eps_hit: spec.eps_hit,
        c_tol: spec.c_tol,
        envelope_points: spec.envelope_points,
        envelope_samples: spec.envelope_samples,
        box_bound: spec.box_bound,
        ..Default::default()
    };
    let report = couple(&model, coord, &spec.x0, spec.t, spec.dt, config.master_seed, &opts)?;
    let path = out_dir.join("coupling_report.json");
    out::write_json(&path, &report)?;
    if spec.csv {
        out::write_coupling_csv(&out_dir.join("coupling.csv"), &report)?;
    }
    println!(
        "compare: verdict {:?}, margin {:.6}, violations {}/{} -> {}",
        report.verdict,
        report.margin_min,
        report.violations,
        report.grid_points,
        path.display()
    );
    match report.verdict {
        CouplingVerdict::Ordered => Ok(()),
        CouplingVerdict::Violated => Err(CliError::Verdict(format!(
            "ordering violated at {} of {} grid points",
            report.violations, report.grid_points
        ))),
        CouplingVerdict::Inconclusive => Err(CliError::Verdict("coupling inconclusive".into())),
    }
}

fn cmd_classify(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let spec = config.classify.as_ref().ok_or_else(|| usage("config needs a [classify] section"))?;
    let need = |v: Option<f64>, what: &str| {
        v.ok_or_else(|| usage(format!("classify `{}` requires `{what}`", spec.diffusion)))
    };
    let mut d = match spec.diffusion.as_str() {
        "ball_dominating" => {
            let n = spec.n.ok_or_else(|| usage("ball_dominating requires `n`"))?;
            Diffusion1D::ball_dominating(n, need(spec.kappa, "kappa")?)
        }
        "bessel" => Diffusion1D::bessel(need(spec.c, "c")?),
        "custom" => {
            let drift_src = spec.drift.as_ref().ok_or_else(|| usage("custom requires `drift`"))?;
            let diff_src = spec.diff_sq.as_ref().ok_or_else(|| usage("custom requires `diff_sq`"))?;
            let drift = expr::parse(drift_src, 1)?;
            let diff_sq = expr::parse(diff_src, 1)?;
            let interval = spec.interval.ok_or_else(|| usage("custom requires `interval`"))?;
            Diffusion1D::new(
                move |u| drift.evaluate(&[u]).unwrap_or(f64::NAN),
                move |u| diff_sq.evaluate(&[u]).unwrap_or(f64::NAN),
                (interval[0], interval[1]),
            )?
        }
        other => return Err(usage(format!("unknown diffusion `{other}`"))),
    };
    if let Some(y0) = spec.y0 {
        d = d.with_reference(y0)?;
    }
    let sides: &[EndpointSide] = match spec.endpoint {
        EndpointChoice::Lower => &[EndpointSide::Lower],
        EndpointChoice::Upper => &[EndpointSide::Upper],
        EndpointChoice::Both => &[EndpointSide::Lower, EndpointSide::Upper],
    };
    let verdicts: Vec<BoundaryVerdict> = sides.iter().map(|&s| d.classify(s)).collect();
    #[derive(Serialize)]
    struct VerdictFile<'a> {
        verdicts: &'a [BoundaryVerdict],
    }
    let path = out_dir.join("boundary_verdict.json");
    out::write_json(&path, &VerdictFile { verdicts: &verdicts })?;
    let mut inconclusive = 0usize;
    for v in &verdicts {
        println!("classify {:?}: {:?} (integral {:.4e})", v.endpoint, v.classification, v.scale_integral_estimate);
        if v.classification == Classification::Inconclusive {
            inconclusive += 1;
        }
    }
    println!("verdicts -> {}", path.display());
    if inconclusive > 0 {
        return Err(CliError::Verdict(format!("{inconclusive} endpoint(s) inconclusive")));
    }
    Ok(())
}

fn cmd_modulus(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let spec = config.modulus.as_ref().ok_or_else(|| usage("config needs a [modulus] section"))?;
    let modulus = parse_modulus(&spec.rho, None)?;
    let ladder = ModulusLadder::build(modulus, spec.k_max)?;
    let (sk, phi) = out::write_modulus_csvs(out_dir, &ladder, spec.grid_max, spec.grid_points)?;
    println!(
        "modulus: K = {}, s_K = {:.6e} -> {}, {}",
        ladder.k_max(),
        ladder.s()[ladder.k_max()],
        sk.display(),
        phi.display()
    );
    Ok(())
}

fn cmd_uniqueness(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let model = require_model(config)?;
    let spec = config.uniqueness.as_ref().ok_or_else(|| usage("config needs a [uniqueness] section"))?;
    let report = paths::uniqueness_gap(
        &model,
        &UniquenessParams {
            x0: spec.x0.clone(),
            t: spec.t,
            dt: spec.dt,
            scheme_a: spec.scheme_a,
            scheme_b: spec.scheme_b,
            refinements: spec.refinements,
            paths: spec.paths,
            master_seed: config.master_seed,
        },
    )?;
    let path = out_dir.join("gap_report.json");
    out::write_json(&path, &report)?;
    println!(
        "uniqueness: refine gaps {:?}, empirical order {:.3} -> {}",
        report.refine_gap_a,
        report.mean_order_a(),
        path.display()
    );
    Ok(())
}

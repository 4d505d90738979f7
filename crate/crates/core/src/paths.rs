//! Brownian path generation, SDE integration schemes, and the Monte Carlo
//! driver.
//!
//! Randomness is counter-based: every Gaussian increment is addressed by
//! `(master_seed, path, level, step, dim)` and produced by hashing that key
//! through a splitmix64-style avalanche followed by a Box–Muller transform.
//! There is no sequential generator state, so paths can be simulated in any
//! order, on any number of threads, with bit-identical results.
//!
//! Paths refine dyadically: level `l` carries `base_steps * 2^l` increments
//! per coordinate, and level `l+1` is obtained from level `l` by conditional
//! midpoint insertion (each coarse increment splits into two halves whose sum
//! reproduces it). Integrating the same path at consecutive levels therefore
//! uses consistent noise, which is what the refinement studies rely on.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{norm_sq, Domain, Model, ModelError};

#[derive(Debug, Error)]
pub enum PathsError {
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize, partial: Box<Trajectory> },
    #[error("invalid parameter: {reason}")]
    InvalidParameter { reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

// ---------------------------------------------------------------------------
// counter-based noise
// ---------------------------------------------------------------------------

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub(crate) fn avalanche(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub(crate) fn mix(h: u64, w: u64) -> u64 {
    avalanche(h ^ w.wrapping_mul(GOLDEN).wrapping_add(GOLDEN))
}

/// Stateless stream of Gaussian variates addressed by explicit counters.
#[derive(Debug, Clone, Copy)]
pub struct NoiseStream {
    master: u64,
}

impl NoiseStream {
    pub fn new(master_seed: u64) -> NoiseStream {
        NoiseStream { master: avalanche(master_seed.wrapping_add(GOLDEN)) }
    }

    #[inline]
    fn word(&self, path: u64, level: u64, step: u64, dim: u64, draw: u64) -> u64 {
        let mut h = self.master;
        h = mix(h, path);
        h = mix(h, level);
        h = mix(h, step);
        h = mix(h, dim);
        mix(h, draw)
    }

    #[inline]
    fn unit(&self, path: u64, level: u64, step: u64, dim: u64, draw: u64) -> f64 {
        // 53 high bits into (0, 1]; the +1 keeps log() away from zero
        (((self.word(path, level, step, dim, draw) >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal variate for the given counter key (Box–Muller).
    #[inline]
    pub fn normal(&self, path: u64, level: u64, step: u64, dim: u64) -> f64 {
        let u1 = self.unit(path, level, step, dim, 0);
        let u2 = self.unit(path, level, step, dim, 1);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

// ---------------------------------------------------------------------------
// Brownian paths with dyadic refinement
// ---------------------------------------------------------------------------

/// One driving Brownian path stored as per-level increment arrays.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    dim: usize,
    horizon: f64,
    base_steps: usize,
    master_seed: u64,
    path_index: u64,
    /// `levels[l][step * dim + d]`
    levels: Vec<Vec<f64>>,
}

impl BrownianPath {
    /// Samples level 0 and `levels` bridge refinements.
    pub fn sample(
        dim: usize,
        horizon: f64,
        base_steps: usize,
        levels: usize,
        master_seed: u64,
        path_index: u64,
    ) -> BrownianPath {
        assert!(base_steps >= 1, "base_steps must be at least 1");
        assert!(horizon > 0.0, "horizon must be positive");
        let stream = NoiseStream::new(master_seed);
        let dt0 = horizon / base_steps as f64;
        let scale = dt0.sqrt();
        let mut level0 = vec![0.0; base_steps * dim];
        for step in 0..base_steps {
            for d in 0..dim {
                level0[step * dim + d] = scale * stream.normal(path_index, 0, step as u64, d as u64);
            }
        }
        let mut path = BrownianPath {
            dim,
            horizon,
            base_steps,
            master_seed,
            path_index,
            levels: vec![level0],
        };
        for _ in 0..levels {
            path.refine();
        }
        path
    }

    /// Appends one refinement level: each coarse increment over `[t, t+h]`
    /// splits into `c/2 + z` and `c/2 - z` with `z ~ N(0, h/4)`, so the pair
    /// sums back to the coarse increment and each half has variance `h/2`.
    pub fn refine(&mut self) {
        let stream = NoiseStream::new(self.master_seed);
        let coarse_level = self.levels.len() - 1;
        let coarse = &self.levels[coarse_level];
        let steps = self.base_steps << coarse_level;
        let dt_coarse = self.horizon / steps as f64;
        let spread = 0.5 * dt_coarse.sqrt();
        let mut fine = vec![0.0; coarse.len() * 2];
        for step in 0..steps {
            for d in 0..self.dim {
                let c = coarse[step * self.dim + d];
                let z = spread
                    * stream.normal(self.path_index, (coarse_level + 1) as u64, step as u64, d as u64);
                fine[(2 * step) * self.dim + d] = 0.5 * c + z;
                fine[(2 * step + 1) * self.dim + d] = 0.5 * c - z;
            }
        }
        self.levels.push(fine);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn steps(&self, level: usize) -> usize {
        self.base_steps << level
    }

    pub fn dt(&self, level: usize) -> f64 {
        self.horizon / self.steps(level) as f64
    }

    /// Increments of the given level, laid out `[step * dim + d]`.
    pub fn increments(&self, level: usize) -> &[f64] {
        &self.levels[level]
    }
}

// ---------------------------------------------------------------------------
// schemes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Coefficients evaluated at the state as is.
    Euler,
    /// Coefficients evaluated at the projection of the state onto the domain
    /// closure (positive part on the orthant, radial projection on the
    /// ball); the state itself is left untouched.
    FullTruncation,
    /// Euler step followed by projection of the state onto the closure.
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Keep integrating after a boundary hit flag fires.
    Continue,
    /// Freeze the state at the first hit.
    Absorb,
}

/// Reusable stepping kernel holding evaluation buffers.
pub struct Stepper<'m> {
    model: &'m Model,
    scheme: Scheme,
    eval_point: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m Model, scheme: Scheme) -> Stepper<'m> {
        let n = model.dim();
        Stepper {
            model,
            scheme,
            eval_point: vec![0.0; n],
            mu: vec![0.0; n],
            sigma: vec![0.0; n * n],
        }
    }

    /// One step `x -> x + mu dt + sigma dW` under the configured scheme.
    pub fn step_into(&mut self, x: &[f64], dt: f64, dw: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        let n = self.model.dim();
        if self.scheme == Scheme::FullTruncation {
            self.model.project_into_closure(x, &mut self.eval_point);
            self.model.drift_into(&self.eval_point, &mut self.mu)?;
            self.model.diffusion_into(&self.eval_point, &mut self.sigma)?;
        } else {
            self.model.drift_into(x, &mut self.mu)?;
            self.model.diffusion_into(x, &mut self.sigma)?;
        }
        for i in 0..n {
            let mut acc = x[i] + self.mu[i] * dt;
            for j in 0..n {
                acc += self.sigma[i * n + j] * dw[j];
            }
            out[i] = acc;
        }
        if self.scheme == Scheme::Projected {
            self.model.project_into_closure(out, &mut self.eval_point);
            out.copy_from_slice(&self.eval_point);
        }
        Ok(())
    }
}

/// Single step, allocating variant of [`Stepper::step_into`].
pub fn step(model: &Model, scheme: Scheme, x: &[f64], dt: f64, dw: &[f64]) -> Result<Vec<f64>, ModelError> {
    let mut out = vec![0.0; model.dim()];
    Stepper::new(model, scheme).step_into(x, dt, dw, &mut out)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// trajectories
// ---------------------------------------------------------------------------

/// A simulated path on a uniform time grid, with boundary-proximity flags.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub n: usize,
    pub dt: f64,
    pub scheme: Scheme,
    pub master_seed: u64,
    pub path_index: u64,
    pub eps_hit: f64,
    /// `(steps + 1) * n` states, row major; row 0 is the initial condition.
    pub states: Vec<f64>,
    /// First grid index with `x_i <= eps_hit` (orthant models).
    pub coord_hits: Vec<Option<usize>>,
    /// First grid index with `|x| >= 1 - eps_hit` (ball models).
    pub radial_hit: Option<usize>,
}

impl Trajectory {
    /// Number of grid points (steps + 1).
    pub fn len(&self) -> usize {
        self.states.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, m: usize) -> &[f64] {
        &self.states[m * self.n..(m + 1) * self.n]
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.dt
    }

    /// Earliest hit flag across coordinates and the radial flag.
    pub fn first_hit(&self) -> Option<usize> {
        let coord = self.coord_hits.iter().filter_map(|h| *h).min();
        match (coord, self.radial_hit) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

fn update_hits(domain: Domain, x: &[f64], m: usize, eps_hit: f64, traj: &mut Trajectory) -> bool {
    let mut hit_now = false;
    match domain {
        Domain::PositiveOrthant => {
            for (i, &v) in x.iter().enumerate() {
                if traj.coord_hits[i].is_none() && v <= eps_hit {
                    traj.coord_hits[i] = Some(m);
                    hit_now = true;
                }
            }
        }
        Domain::UnitBall => {
            if traj.radial_hit.is_none() && norm_sq(x).sqrt() >= 1.0 - eps_hit {
                traj.radial_hit = Some(m);
                hit_now = true;
            }
        }
        Domain::FullSpace => {}
    }
    hit_now
}

/// Integrates `model` along the given level of a Brownian path.
pub fn integrate(
    model: &Model,
    x0: &[f64],
    path: &BrownianPath,
    level: usize,
    scheme: Scheme,
    policy: BoundaryPolicy,
    eps_hit: f64,
) -> Result<Trajectory, PathsError> {
    let n = model.dim();
    if x0.len() != n {
        return Err(PathsError::InvalidParameter {
            reason: format!("x0 has dimension {}, model has {}", x0.len(), n),
        });
    }
    if !model.is_interior(x0) {
        return Err(PathsError::InvalidParameter {
            reason: "x0 must lie in the open domain".into(),
        });
    }
    let steps = path.steps(level);
    let dt = path.dt(level);
    let incs = path.increments(level);
    let mut traj = Trajectory {
        n,
        dt,
        scheme,
        master_seed: path.master_seed,
        path_index: path.path_index,
        eps_hit,
        states: Vec::with_capacity((steps + 1) * n),
        coord_hits: vec![None; n],
        radial_hit: None,
    };
    traj.states.extend_from_slice(x0);
    update_hits(model.domain(), x0, 0, eps_hit, &mut traj);
    let mut stepper = Stepper::new(model, scheme);
    let mut cur = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut frozen = matches!(policy, BoundaryPolicy::Absorb) && traj.first_hit().is_some();
    for m in 0..steps {
        if frozen {
            traj.states.extend_from_slice(&cur);
            continue;
        }
        let dw = &incs[m * n..(m + 1) * n];
        stepper.step_into(&cur, dt, dw, &mut next)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(PathsError::NonFiniteState { step: m + 1, partial: Box::new(traj) });
        }
        traj.states.extend_from_slice(&next);
        cur.copy_from_slice(&next);
        let hit = update_hits(model.domain(), &cur, m + 1, eps_hit, &mut traj);
        if hit && matches!(policy, BoundaryPolicy::Absorb) {
            frozen = true;
        }
    }
    Ok(traj)
}

/// Convenience wrapper: builds the level-0 path for `(t, dt)` and integrates.
/// `dt` must divide `t` within 1e-12 relative error.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    model: &Model,
    x0: &[f64],
    t: f64,
    dt: f64,
    scheme: Scheme,
    policy: BoundaryPolicy,
    eps_hit: f64,
    master_seed: u64,
    path_index: u64,
) -> Result<Trajectory, PathsError> {
    let steps = steps_for(t, dt)?;
    let path = BrownianPath::sample(model.dim(), t, steps, 0, master_seed, path_index);
    integrate(model, x0, &path, 0, scheme, policy, eps_hit)
}

pub fn steps_for(t: f64, dt: f64) -> Result<usize, PathsError> {
    if !(t > 0.0 && dt > 0.0) {
        return Err(PathsError::InvalidParameter {
            reason: "t and dt must be positive".into(),
        });
    }
    let steps = (t / dt).round();
    if steps < 1.0 || ((steps * dt - t) / t).abs() > 1e-12 {
        return Err(PathsError::InvalidParameter {
            reason: format!("dt = {dt} does not divide t = {t}"),
        });
    }
    Ok(steps as usize)
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McParams {
    pub x0: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    pub paths: usize,
    pub scheme: Scheme,
    pub checkpoints: Vec<f64>,
    pub eps_hit: f64,
    pub master_seed: u64,
}

/// Per-checkpoint sample moments with standard errors.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMoments {
    pub t: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub std_error: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MinStats {
    /// Mean over paths of the per-path minimum of each coordinate.
    pub mean_min: Vec<f64>,
    /// Overall minimum of each coordinate across all paths and times.
    pub min_min: Vec<f64>,
}

/// Aggregated Monte Carlo output. Aggregation is a fixed-order sequential
/// reduction over per-path records, so the summary is bit-identical for any
/// thread count.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct McSummary {
    pub paths: usize,
    pub failed_paths: usize,
    pub scheme: Scheme,
    pub t: f64,
    pub dt: f64,
    pub eps_hit: f64,
    pub master_seed: u64,
    /// Fraction of paths whose coordinate `i` reached `eps_hit`.
    pub hit_fraction: Vec<f64>,
    /// Fraction of paths with any coordinate (or radius) flag.
    pub any_hit_fraction: f64,
    /// Ball models: fraction of paths with `max_t |X| >= 1 - eps_hit`.
    pub radial_hit_fraction: f64,
    /// Largest `max_t |X(t)|` over all paths.
    pub max_norm_max: f64,
    pub checkpoint_moments: Vec<CheckpointMoments>,
    pub min_over_path: MinStats,
    #[serde(skip)]
    pub runtime_seconds: f64,
}

struct PathRecord {
    checkpoint_states: Vec<f64>,
    coord_hit: Vec<bool>,
    radial_hit: bool,
    min_coord: Vec<f64>,
    max_norm: f64,
    failed: bool,
}

fn run_path(
    model: &Model,
    params: &McParams,
    steps: usize,
    checkpoint_steps: &[usize],
    stream: &NoiseStream,
    path_index: u64,
) -> PathRecord {
    let n = model.dim();
    let dt = params.dt;
    let scale = dt.sqrt();
    let mut stepper = Stepper::new(model, params.scheme);
    let mut cur = params.x0.clone();
    let mut next = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let mut rec = PathRecord {
        checkpoint_states: Vec::with_capacity(checkpoint_steps.len() * n),
        coord_hit: vec![false; n],
        radial_hit: false,
        min_coord: params.x0.clone(),
        max_norm: norm_sq(&params.x0).sqrt(),
        failed: false,
    };
    let orthant = model.domain() == Domain::PositiveOrthant;
    let ball = model.domain() == Domain::UnitBall;
    let observe = |x: &[f64], rec: &mut PathRecord| {
        for i in 0..n {
            if x[i] < rec.min_coord[i] {
                rec.min_coord[i] = x[i];
            }
            if orthant && x[i] <= params.eps_hit {
                rec.coord_hit[i] = true;
            }
        }
        let r = norm_sq(x).sqrt();
        if r > rec.max_norm {
            rec.max_norm = r;
        }
        if ball && r >= 1.0 - params.eps_hit {
            rec.radial_hit = true;
        }
    };
    observe(&cur, &mut rec);
    let mut next_checkpoint = 0;
    while next_checkpoint < checkpoint_steps.len() && checkpoint_steps[next_checkpoint] == 0 {
        rec.checkpoint_states.extend_from_slice(&cur);
        next_checkpoint += 1;
    }
    for m in 0..steps {
        for d in 0..n {
            dw[d] = scale * stream.normal(path_index, 0, m as u64, d as u64);
        }
        if stepper.step_into(&cur, dt, &dw, &mut next).is_err() || next.iter().any(|v| !v.is_finite()) {
            rec.failed = true;
            return rec;
        }
        cur.copy_from_slice(&next);
        observe(&cur, &mut rec);
        while next_checkpoint < checkpoint_steps.len() && checkpoint_steps[next_checkpoint] == m + 1 {
            rec.checkpoint_states.extend_from_slice(&cur);
            next_checkpoint += 1;
        }
    }
    rec
}

/// Runs `params.paths` independent paths in parallel and aggregates.
pub fn monte_carlo(model: &Model, params: &McParams) -> Result<McSummary, PathsError> {
    let start = std::time::Instant::now();
    let n = model.dim();
    if params.paths == 0 {
        return Err(PathsError::InvalidParameter { reason: "paths must be at least 1".into() });
    }
    if params.x0.len() != n {
        return Err(PathsError::InvalidParameter {
            reason: format!("x0 has dimension {}, model has {}", params.x0.len(), n),
        });
    }
    let steps = steps_for(params.t, params.dt)?;
    let mut checkpoint_steps = Vec::with_capacity(params.checkpoints.len());
    for &ct in &params.checkpoints {
        let s = (ct / params.dt).round();
        if !(0.0..=(steps as f64)).contains(&s) || (s * params.dt - ct).abs() > 1e-9 * params.t.max(1.0) {
            return Err(PathsError::InvalidParameter {
                reason: format!("checkpoint {ct} is not on the time grid"),
            });
        }
        checkpoint_steps.push(s as usize);
    }
    if checkpoint_steps.windows(2).any(|w| w[0] > w[1]) {
        return Err(PathsError::InvalidParameter {
            reason: "checkpoints must be increasing".into(),
        });
    }
    let stream = NoiseStream::new(params.master_seed);
    // indexed collect keeps the reduction order fixed regardless of threads
    let records: Vec<PathRecord> = (0..params.paths as u64)
        .into_par_iter()
        .map(|p| run_path(model, params, steps, &checkpoint_steps, &stream, p))
        .collect();

    let mut failed = 0usize;
    let mut hit_counts = vec![0usize; n];
    let mut any_hits = 0usize;
    let mut radial_hits = 0usize;
    let mut max_norm_max = 0.0f64;
    let mut mean_min = vec![0.0; n];
    let mut min_min = vec![f64::INFINITY; n];
    let ck = checkpoint_steps.len();
    let mut sums = vec![0.0; ck * n];
    let mut sq_sums = vec![0.0; ck * n];
    let mut ok_paths = 0usize;
    for rec in &records {
        if rec.failed {
            failed += 1;
            continue;
        }
        ok_paths += 1;
        let mut any = rec.radial_hit;
        for i in 0..n {
            if rec.coord_hit[i] {
                hit_counts[i] += 1;
                any = true;
            }
            mean_min[i] += rec.min_coord[i];
            min_min[i] = min_min[i].min(rec.min_coord[i]);
        }
        if any {
            any_hits += 1;
        }
        if rec.radial_hit {
            radial_hits += 1;
        }
        max_norm_max = max_norm_max.max(rec.max_norm);
        for (acc, (sq, v)) in sums.iter_mut().zip(sq_sums.iter_mut().zip(&rec.checkpoint_states)) {
            *acc += v;
            *sq += v * v;
        }
    }
    let denom = ok_paths.max(1) as f64;
    let mut checkpoint_moments = Vec::with_capacity(ck);
    for (c, &cs) in checkpoint_steps.iter().enumerate() {
        let mut mean = vec![0.0; n];
        let mut variance = vec![0.0; n];
        let mut std_error = vec![0.0; n];
        for i in 0..n {
            let s = sums[c * n + i];
            let sq = sq_sums[c * n + i];
            let m = s / denom;
            mean[i] = m;
            let var = if ok_paths > 1 {
                ((sq - s * s / denom) / (denom - 1.0)).max(0.0)
            } else {
                0.0
            };
            variance[i] = var;
            std_error[i] = (var / denom).sqrt();
        }
        checkpoint_moments.push(CheckpointMoments {
            t: cs as f64 * params.dt,
            mean,
            variance,
            std_error,
        });
    }
    for v in &mut mean_min {
        *v /= denom;
    }
    Ok(McSummary {
        paths: params.paths,
        failed_paths: failed,
        scheme: params.scheme,
        t: params.t,
        dt: params.dt,
        eps_hit: params.eps_hit,
        master_seed: params.master_seed,
        hit_fraction: hit_counts.iter().map(|&c| c as f64 / denom).collect(),
        any_hit_fraction: any_hits as f64 / denom,
        radial_hit_fraction: radial_hits as f64 / denom,
        max_norm_max,
        checkpoint_moments,
        min_over_path: MinStats { mean_min, min_min },
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// uniqueness / refinement gaps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniquenessParams {
    pub x0: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    pub scheme_a: Scheme,
    pub scheme_b: Scheme,
    /// Number of dyadic resolutions `dt, dt/2, dt/4, ...` reported.
    pub refinements: usize,
    pub paths: usize,
    pub master_seed: u64,
}

/// Gap diagnostics for solutions driven by the same Brownian path.
///
/// `cross_gap[j]` is the mean over paths of `sup_t |X_a - X_b|` with both
/// schemes at resolution `dt / 2^j` (exactly zero when the schemes agree).
/// `refine_gap_*[j]` is the mean sup-distance between resolutions `j` and
/// `j+1` of one scheme — how fast successive refinements of the same driving
/// path collapse onto a single limit; its dyadic decay rate estimates the
/// strong order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub dts: Vec<f64>,
    pub cross_gap: Vec<f64>,
    pub refine_gap_a: Vec<f64>,
    pub refine_gap_b: Vec<f64>,
    /// `log2(refine_gap_a[j] / refine_gap_a[j+1])`
    pub orders_a: Vec<f64>,
    pub paths: usize,
}

impl GapReport {
    /// Endpoint slope of `log2(refine_gap_a)`: the empirical strong order of
    /// scheme `a` across the reported resolutions.
    pub fn mean_order_a(&self) -> f64 {
        if self.refine_gap_a.len() < 2 {
            return f64::NAN;
        }
        let first = self.refine_gap_a.first().unwrap();
        let last = self.refine_gap_a.last().unwrap();
        (first / last).log2() / (self.refine_gap_a.len() - 1) as f64
    }
}

fn sup_gap_same_level(a: &Trajectory, b: &Trajectory) -> f64 {
    let mut sup = 0.0f64;
    for m in 0..a.len() {
        let xa = a.state(m);
        let xb = b.state(m);
        let d: f64 = xa.iter().zip(xb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        sup = sup.max(d);
    }
    sup
}

/// Sup distance sampled on the coarse grid between a level trajectory and
/// its refinement at half the step.
fn sup_gap_refined(coarse: &Trajectory, fine: &Trajectory) -> f64 {
    let mut sup = 0.0f64;
    for m in 0..coarse.len() {
        let xc = coarse.state(m);
        let xf = fine.state(2 * m);
        let d: f64 = xc.iter().zip(xf).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        sup = sup.max(d);
    }
    sup
}

/// Integrates both schemes on the same Brownian paths across dyadic
/// resolutions and reports the gap diagnostics.
pub fn uniqueness_gap(model: &Model, params: &UniquenessParams) -> Result<GapReport, PathsError> {
    if params.refinements < 1 {
        return Err(PathsError::InvalidParameter { reason: "refinements must be at least 1".into() });
    }
    if params.paths == 0 {
        return Err(PathsError::InvalidParameter { reason: "paths must be at least 1".into() });
    }
    let base_steps = steps_for(params.t, params.dt)?;
    let levels = params.refinements; // levels 0..=refinements are sampled
    let same_scheme = params.scheme_a == params.scheme_b;
    type PathGaps = (Vec<f64>, Vec<f64>, Vec<f64>);
    let per_path: Vec<Result<PathGaps, PathsError>> = (0..params.paths as u64)
        .into_par_iter()
        .map(|p| {
            let path =
                BrownianPath::sample(model.dim(), params.t, base_steps, levels, params.master_seed, p);
            let mut traj_a = Vec::with_capacity(levels + 1);
            let mut traj_b = Vec::with_capacity(levels + 1);
            for l in 0..=levels {
                traj_a.push(integrate(
                    model,
                    &params.x0,
                    &path,
                    l,
                    params.scheme_a,
                    BoundaryPolicy::Continue,
                    0.0,
                )?);
                if !same_scheme {
                    traj_b.push(integrate(
                        model,
                        &params.x0,
                        &path,
                        l,
                        params.scheme_b,
                        BoundaryPolicy::Continue,
                        0.0,
                    )?);
                }
            }
            let trajs_b: &[Trajectory] = if same_scheme { &traj_a } else { &traj_b };
            let cross: Vec<f64> = (0..params.refinements)
                .map(|j| if same_scheme { 0.0 } else { sup_gap_same_level(&traj_a[j], &trajs_b[j]) })
                .collect();
            let ref_a: Vec<f64> = (0..params.refinements)
                .map(|j| sup_gap_refined(&traj_a[j], &traj_a[j + 1]))
                .collect();
            let ref_b: Vec<f64> = (0..params.refinements)
                .map(|j| sup_gap_refined(&trajs_b[j], &trajs_b[j + 1]))
                .collect();
            Ok((cross, ref_a, ref_b))
        })
        .collect();

    let r = params.refinements;
    let mut cross_gap = vec![0.0; r];
    let mut refine_gap_a = vec![0.0; r];
    let mut refine_gap_b = vec![0.0; r];
    for res in per_path {
        let (c, a, b) = res?;
        for j in 0..r {
            cross_gap[j] += c[j];
            refine_gap_a[j] += a[j];
            refine_gap_b[j] += b[j];
        }
    }
    let denom = params.paths as f64;
    for v in cross_gap.iter_mut().chain(refine_gap_a.iter_mut()).chain(refine_gap_b.iter_mut()) {
        *v /= denom;
    }
    let orders_a = refine_gap_a.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok(GapReport {
        dts: (0..r).map(|j| params.dt / (1u64 << j) as f64).collect(),
        cross_gap,
        refine_gap_a,
        refine_gap_b,
        orders_a,
        paths: params.paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;

    fn lit(v: f64) -> Expr {
        Expr::Lit(v)
    }

    #[test]
    fn increment_variance_bookkeeping() {
        let path = BrownianPath::sample(1, 1.0, 4, 0, 7, 0);
        assert_eq!(path.increments(0).len(), 4);
        assert_eq!(path.dt(0), 0.25);
        // empirical variance over 1e5 increments within 3 standard errors
        // of T / steps (sampling bound for the variance of a Gaussian sample)
        let paths = 25_000usize;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for p in 0..paths as u64 {
            let path = BrownianPath::sample(1, 1.0, 4, 0, 7, p);
            for &v in path.increments(0) {
                sum_sq += v * v;
                count += 1;
            }
        }
        let var = sum_sq / count as f64;
        let se = 0.25 * (2.0 / count as f64).sqrt();
        assert!((var - 0.25).abs() < 3.0 * se, "variance {var} vs 0.25 (se {se})");
    }

    #[test]
    fn bridge_refinement_is_consistent() {
        let mut path = BrownianPath::sample(2, 1.0, 4, 0, 42, 3);
        path.refine();
        path.refine();
        for level in 0..2 {
            let coarse = path.increments(level).to_vec();
            let fine = path.increments(level + 1);
            let n = path.dim();
            for step in 0..path.steps(level) {
                for d in 0..n {
                    let c = coarse[step * n + d];
                    let sum = fine[(2 * step) * n + d] + fine[(2 * step + 1) * n + d];
                    assert!(
                        (sum - c).abs() <= 1e-15_f64.max(1e-15 * c.abs()),
                        "level {level} step {step}: {sum} vs {c}"
                    );
                }
            }
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let s = NoiseStream::new(99);
        assert_eq!(s.normal(0, 0, 0, 0), s.normal(0, 0, 0, 0));
        assert_ne!(s.normal(0, 0, 0, 0), s.normal(1, 0, 0, 0));
        assert_ne!(s.normal(0, 0, 0, 0), s.normal(0, 1, 0, 0));
        assert_ne!(s.normal(0, 0, 0, 0), s.normal(0, 0, 1, 0));
        assert_ne!(s.normal(0, 0, 0, 0), s.normal(0, 0, 0, 1));
    }

    #[test]
    fn step_zero_coefficients_is_identity() {
        let model =
            Model::custom(2, Domain::FullSpace, vec![lit(0.0), lit(0.0)], vec![lit(0.0); 4]).unwrap();
        let x = [1.5, -2.0];
        for scheme in [Scheme::Euler, Scheme::FullTruncation, Scheme::Projected] {
            let next = step(&model, scheme, &x, 0.01, &[3.0, -1.0]).unwrap();
            assert_eq!(next, vec![1.5, -2.0]);
        }
    }

    #[test]
    fn step_bessel_drift_only() {
        let model = Model::bessel1d(2.0);
        let next = step(&model, Scheme::Euler, &[1.0], 0.01, &[0.0]).unwrap();
        assert!((next[0] - 1.02).abs() < 1e-15);
    }

    #[test]
    fn full_truncation_evaluates_at_positive_part() {
        // multicir at x = -0.01: drift and diffusion evaluated at 0
        let model = Model::multicir(1, vec![crate::expr::parse("x1 + 3", 1).unwrap()], None).unwrap();
        let next = step(&model, Scheme::FullTruncation, &[-0.01], 0.1, &[5.0]).unwrap();
        assert!((next[0] - (-0.01 + 0.3)).abs() < 1e-15);
        // euler instead evaluates at the state itself
        let next = step(&model, Scheme::Euler, &[-0.01], 0.1, &[5.0]).unwrap();
        let expect = -0.01 + 0.1 * 2.99 + 0.01f64.sqrt() * 5.0;
        assert!((next[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn integrate_constant_for_zero_coefficients() {
        let model = Model::custom(1, Domain::FullSpace, vec![lit(0.0)], vec![lit(0.0)]).unwrap();
        let traj = simulate(
            &model,
            &[2.5],
            1.0,
            0.125,
            Scheme::Euler,
            BoundaryPolicy::Continue,
            1e-4,
            11,
            0,
        )
        .unwrap();
        assert_eq!(traj.len(), 9);
        for m in 0..traj.len() {
            assert_eq!(traj.state(m), &[2.5]);
        }
    }

    #[test]
    fn integrate_rejects_bad_grid_and_exterior_start() {
        let model = Model::bessel1d(1.0);
        assert!(matches!(
            simulate(&model, &[1.0], 1.0, 0.3, Scheme::Euler, BoundaryPolicy::Continue, 0.0, 1, 0),
            Err(PathsError::InvalidParameter { .. })
        ));
        assert!(matches!(
            simulate(&model, &[-1.0], 1.0, 0.5, Scheme::Euler, BoundaryPolicy::Continue, 0.0, 1, 0),
            Err(PathsError::InvalidParameter { .. })
        ));
    }

    #[test]
    fn absorb_freezes_after_hit() {
        // strong downward drift crosses eps_hit quickly
        let model = Model::custom(1, Domain::PositiveOrthant, vec![lit(-1.0)], vec![lit(0.0)]).unwrap();
        let traj = simulate(
            &model,
            &[0.3],
            1.0,
            0.125,
            Scheme::Euler,
            BoundaryPolicy::Absorb,
            0.05,
            1,
            0,
        )
        .unwrap();
        let hit = traj.coord_hits[0].expect("must hit");
        for m in hit..traj.len() {
            assert_eq!(traj.state(m), traj.state(hit));
        }
    }

    #[test]
    fn mc_constant_drift_exact_mean() {
        // mu constant, sigma = 0: mean at T is x0 + a T exactly
        let model = Model::custom(1, Domain::FullSpace, vec![lit(0.7)], vec![lit(0.0)]).unwrap();
        let summary = monte_carlo(
            &model,
            &McParams {
                x0: vec![1.0],
                t: 2.0,
                dt: 0.25,
                paths: 8,
                scheme: Scheme::Euler,
                checkpoints: vec![2.0],
                eps_hit: 1e-4,
                master_seed: 5,
            },
        )
        .unwrap();
        let mean = summary.checkpoint_moments[0].mean[0];
        assert!((mean - 2.4).abs() < 1e-12);
        assert_eq!(summary.failed_paths, 0);
    }

    #[test]
    fn mc_ornstein_decay_mean() {
        // dX = -X dt, no noise: mean decays like the ODE within O(dt)
        let model = Model::custom(
            1,
            Domain::FullSpace,
            vec![crate::expr::parse("-x1", 1).unwrap()],
            vec![lit(0.0)],
        )
        .unwrap();
        let summary = monte_carlo(
            &model,
            &McParams {
                x0: vec![1.0],
                t: 1.0,
                dt: 1e-3,
                paths: 2,
                scheme: Scheme::Euler,
                checkpoints: vec![1.0],
                eps_hit: 0.0,
                master_seed: 5,
            },
        )
        .unwrap();
        let mean = summary.checkpoint_moments[0].mean[0];
        assert!((mean - (-1.0f64).exp()).abs() < 1e-3, "mean {mean}");
    }

    #[test]
    fn mc_bessel_expectation_identity() {
        // dX = 2 dt + 2 sqrt(X) dW from 1: constant drift plus a martingale,
        // so E[X_T] = 1 + 2T
        let model = Model::bessel1d(2.0);
        let summary = monte_carlo(
            &model,
            &McParams {
                x0: vec![1.0],
                t: 1.0,
                dt: 1e-3,
                paths: 4000,
                scheme: Scheme::FullTruncation,
                checkpoints: vec![1.0],
                eps_hit: 1e-3,
                master_seed: 20,
            },
        )
        .unwrap();
        let m = &summary.checkpoint_moments[0];
        let err = (m.mean[0] - 3.0).abs();
        assert!(err < 3.0 * m.std_error[0], "mean {} +- {} vs 3.0", m.mean[0], m.std_error[0]);
    }

    #[test]
    fn mc_is_thread_count_invariant() {
        let model = Model::multicir(2, vec![lit(3.0), lit(3.0)], None).unwrap();
        let params = McParams {
            x0: vec![1.0, 1.0],
            t: 0.5,
            dt: 1e-2,
            paths: 500,
            scheme: Scheme::FullTruncation,
            checkpoints: vec![0.25, 0.5],
            eps_hit: 1e-3,
            master_seed: 33,
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| monte_carlo(&model, &params))
            .unwrap();
        let mut four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| monte_carlo(&model, &params))
            .unwrap();
        four.runtime_seconds = one.runtime_seconds;
        assert_eq!(one, four);
    }

    #[test]
    fn martingale_mean_under_zero_drift() {
        // dX = sqrt(|X|) dW: driftless, so the sample mean at T stays at x0
        let model = Model::multicir(1, vec![lit(0.0)], None).unwrap();
        let summary = monte_carlo(
            &model,
            &McParams {
                x0: vec![1.0],
                t: 1.0,
                dt: 1e-2,
                paths: 10_000,
                scheme: Scheme::FullTruncation,
                checkpoints: vec![1.0],
                eps_hit: 1e-3,
                master_seed: 77,
            },
        )
        .unwrap();
        let m = &summary.checkpoint_moments[0];
        assert!(
            (m.mean[0] - 1.0).abs() < 4.0 * m.std_error[0],
            "mean {} +- {}",
            m.mean[0],
            m.std_error[0]
        );
    }

    #[test]
    fn projected_scheme_stays_in_closure() {
        // coarse steps overshoot constantly; projection must absorb every one
        let ball = Model::unit_ball(2, 4.0, crate::model::Theta::Scalar(0.0)).unwrap();
        let traj = simulate(&ball, &[0.5, 0.0], 1.0, 0.05, Scheme::Projected, BoundaryPolicy::Continue, 1e-4, 13, 0)
            .unwrap();
        for m in 0..traj.len() {
            assert!(norm_sq(traj.state(m)) <= 1.0 + 1e-15, "outside ball at {m}");
        }
        let cir = Model::multicir(1, vec![lit(0.05)], None).unwrap();
        let traj = simulate(&cir, &[0.05], 1.0, 0.05, Scheme::Projected, BoundaryPolicy::Continue, 1e-4, 13, 0)
            .unwrap();
        for m in 0..traj.len() {
            assert!(traj.state(m)[0] >= 0.0, "outside orthant at {m}");
        }
    }

    #[test]
    fn integrate_levels_share_noise() {
        // the same path integrated at consecutive levels is driven by
        // consistent noise: coarse increments equal summed fine increments,
        // so the two trajectories stay close pathwise
        let model = Model::multicir(1, vec![lit(3.0)], None).unwrap();
        let path = BrownianPath::sample(1, 1.0, 100, 1, 55, 0);
        let coarse = integrate(&model, &[1.0], &path, 0, Scheme::FullTruncation, BoundaryPolicy::Continue, 0.0)
            .unwrap();
        let fine = integrate(&model, &[1.0], &path, 1, Scheme::FullTruncation, BoundaryPolicy::Continue, 0.0)
            .unwrap();
        let gap = sup_gap_refined(&coarse, &fine);
        assert!(gap > 0.0 && gap < 0.5, "refinement gap {gap}");
    }

    #[test]
    fn gap_zero_for_identical_schemes() {
        let model = Model::multicir(1, vec![lit(1.0)], None).unwrap();
        let report = uniqueness_gap(
            &model,
            &UniquenessParams {
                x0: vec![1.0],
                t: 1.0,
                dt: 0.01,
                scheme_a: Scheme::FullTruncation,
                scheme_b: Scheme::FullTruncation,
                refinements: 3,
                paths: 4,
                master_seed: 9,
            },
        )
        .unwrap();
        assert!(report.cross_gap.iter().all(|&g| g == 0.0));
        // refinement gaps are nonzero and decreasing for this diffusion
        assert!(report.refine_gap_a[0] > 0.0);
        assert!(report.refine_gap_a[0] > report.refine_gap_a[2]);
    }
}

//! Sampled numerical audits of the structural assumptions on a model, and
//! the radial envelopes they rely on.
//!
//! For an orthant model, the projection `p_i(x) = x_i` has local variance
//! `a_i(x) = m_ii(x)` and drift-to-variance ratio `b_i(x) = mu_i(x) / a_i(x)`.
//! The envelopes
//!
//! ```text
//! a_i_plus(r)  = sup { a_i(x) : x_i = r }        (within the box [0, R]^n)
//! b_i_minus(r) = inf { b_i(x) : x_i = r }
//! ```
//!
//! are estimated slice by slice with a nested low-discrepancy point set, so
//! enlarging `samples_per_slice` can only push `a_plus` up and `b_minus`
//! down. On the ball the radial projection `p(x) = |x|^2` is used instead,
//! with `a(x) = 4 x^T m(x) x` and `b(x) = (2 <x, mu> + tr m) / a` and the
//! slice being the sphere of radius `sqrt(r)`; there the upper envelope
//! `b_plus` drives the domination.
//!
//! All checks are sampled audits: they report a margin and witnesses, never
//! a proof. Verdicts are `pass`, `fail`, or `inconclusive`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::Expr;
use crate::model::{norm_sq, Domain, Model, ModelError, Theta};
use crate::modulus::Modulus;
use crate::paths::{avalanche, mix};
use crate::quad;

#[derive(Debug, Error)]
pub enum ConditionsError {
    #[error("degenerate slice at r = {r}: a_i = 0 at {witness:?}, b_i undefined")]
    DegenerateSlice { r: f64, witness: Vec<f64> },
    #[error("invalid parameter: {reason}")]
    InvalidParameter { reason: String },
    #[error("sigma_tilde required for part (iii) but not supplied")]
    MissingSigmaTilde,
    #[error(transparent)]
    Model(#[from] ModelError),
}

// ---------------------------------------------------------------------------
// low-discrepancy sampling
// ---------------------------------------------------------------------------

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical-inverse (Halton) value of `index` in base `b`, in (0, 1).
fn halton(mut index: u64, b: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    index += 1; // skip the zero point
    while index > 0 {
        f /= b as f64;
        r += f * (index % b) as f64;
        index /= b;
    }
    r
}

fn key_offset(words: &[u64]) -> u64 {
    let mut h = avalanche(0x5EED_0FF5E7);
    for &w in words {
        h = mix(h, w);
    }
    // keep offsets moderate so radical inverses stay cheap
    h % (1 << 24)
}

// ---------------------------------------------------------------------------
// envelopes
// ---------------------------------------------------------------------------

/// Which one-dimensional projection a comparison runs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceCoord {
    /// `p_i(x) = x_i` on the positive orthant (0-based coordinate index).
    Axis(usize),
    /// `p(x) = |x|^2` on the unit ball.
    Radial,
}

/// Numerically estimated envelopes on an increasing `r` grid.
#[derive(Debug, Clone, Serialize)]
pub struct RadialEnvelope {
    pub coord: SliceCoord,
    pub r_grid: Vec<f64>,
    pub a_plus: Vec<f64>,
    pub b_minus: Vec<f64>,
    pub b_plus: Vec<f64>,
    /// States attaining `b_minus` at each grid point.
    pub b_minus_arg: Vec<Vec<f64>>,
    pub box_bound: f64,
    pub samples_per_slice: usize,
    pub seed: u64,
}

impl RadialEnvelope {
    /// Piecewise-linear evaluation of `a_plus`, extended linearly beyond the
    /// grid and floored at zero.
    pub fn a_plus_at(&self, r: f64) -> f64 {
        quad::interp_linear(&self.r_grid, &self.a_plus, r).max(0.0)
    }

    pub fn b_minus_at(&self, r: f64) -> f64 {
        quad::interp_linear(&self.r_grid, &self.b_minus, r)
    }

    pub fn b_plus_at(&self, r: f64) -> f64 {
        quad::interp_linear(&self.r_grid, &self.b_plus, r)
    }
}

/// Uniform grid of `points` values over `(0, hi]`, starting at `hi / points`.
pub fn uniform_r_grid(hi: f64, points: usize) -> Vec<f64> {
    (1..=points).map(|i| hi * i as f64 / points as f64).collect()
}

/// Uniform grid of `points` values strictly inside `(0, hi)`; used for
/// slices that degenerate at both ends, like the radial one on the ball.
pub fn open_r_grid(hi: f64, points: usize) -> Vec<f64> {
    (1..=points).map(|i| hi * i as f64 / (points + 1) as f64).collect()
}

/// Grid inside `(0, hi)` clustered quadratically at both endpoints
/// (`r = hi sin^2`): for variances proportional to `r (hi - r)` the relative
/// chord error of linear interpolation is then uniform across the grid.
pub fn clustered_r_grid(hi: f64, points: usize) -> Vec<f64> {
    (1..=points)
        .map(|i| {
            let theta = std::f64::consts::FRAC_PI_2 * i as f64 / (points + 1) as f64;
            hi * theta.sin().powi(2)
        })
        .collect()
}

struct SliceStats {
    a_plus: f64,
    b_minus: f64,
    b_plus: f64,
    b_minus_arg: Vec<f64>,
}

fn slice_points(
    model: &Model,
    coord: SliceCoord,
    r: f64,
    box_bound: f64,
    samples: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let n = model.dim();
    match coord {
        SliceCoord::Axis(i) => {
            if n == 1 {
                return vec![vec![r]];
            }
            let offset = key_offset(&[seed, i as u64, r.to_bits()]);
            (0..samples)
                .map(|j| {
                    let mut x = vec![0.0; n];
                    let mut free = 0;
                    for d in 0..n {
                        if d == i {
                            x[d] = r;
                        } else {
                            x[d] = box_bound * halton(offset + j as u64, PRIMES[free % PRIMES.len()]);
                            free += 1;
                        }
                    }
                    x
                })
                .collect()
        }
        SliceCoord::Radial => {
            let radius = r.sqrt();
            let offset = key_offset(&[seed, u64::MAX, r.to_bits()]);
            (0..samples)
                .map(|j| {
                    // Gaussianize Halton coordinates and normalize onto the
                    // sphere of radius sqrt(r)
                    let mut g = vec![0.0; n];
                    for (d, gd) in g.iter_mut().enumerate() {
                        let u1 = halton(offset + j as u64, PRIMES[(2 * d) % PRIMES.len()]);
                        let u2 = halton(offset + j as u64, PRIMES[(2 * d + 1) % PRIMES.len()]);
                        *gd = (-2.0 * u1.max(1e-12).ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                    }
                    let nrm = norm_sq(&g).sqrt().max(1e-300);
                    g.iter().map(|v| radius * v / nrm).collect()
                })
                .collect()
        }
    }
}

/// Local variance `a` of the projection `p` at `x`: `m_ii` for an axis
/// slice, `4 x^T m x` for the radial one. Zero is a legal value here.
pub(crate) fn slice_variance(model: &Model, coord: SliceCoord, x: &[f64]) -> Result<f64, ModelError> {
    let n = model.dim();
    match coord {
        SliceCoord::Axis(i) => {
            let mut row = vec![0.0; n];
            model.m_ii(x, i, &mut row)
        }
        SliceCoord::Radial => {
            let m = model.diffusion_matrix_m(x)?;
            let mut quad_form = 0.0;
            for i in 0..n {
                for j in 0..n {
                    quad_form += x[i] * m[i * n + j] * x[j];
                }
            }
            Ok(4.0 * quad_form)
        }
    }
}

/// Local variance `a` and drift-to-variance ratio `b` of the projection
/// `p` at `x`: `(m_ii, mu_i / m_ii)` for an axis slice and
/// `(4 x^T m x, (2 <x, mu> + tr m) / a)` for the radial one. Zero variance
/// makes `b` undefined and is reported as a degenerate slice.
pub(crate) fn slice_values(model: &Model, coord: SliceCoord, x: &[f64]) -> Result<(f64, f64), ConditionsError> {
    let n = model.dim();
    let a = slice_variance(model, coord, x)?;
    if a == 0.0 {
        let r = match coord {
            SliceCoord::Axis(i) => x[i],
            SliceCoord::Radial => norm_sq(x),
        };
        return Err(ConditionsError::DegenerateSlice { r, witness: x.to_vec() });
    }
    let mut mu = vec![0.0; n];
    model.drift_into(x, &mut mu)?;
    match coord {
        SliceCoord::Axis(i) => Ok((a, mu[i] / a)),
        SliceCoord::Radial => {
            let m = model.diffusion_matrix_m(x)?;
            let trace: f64 = (0..n).map(|i| m[i * n + i]).sum();
            let inner: f64 = x.iter().zip(&mu).map(|(xi, mi)| xi * mi).sum();
            Ok((a, (2.0 * inner + trace) / a))
        }
    }
}

/// Estimates the envelopes of `model` along `coord` over `r_grid`.
///
/// Axis slices require a positive-orthant model; the radial slice requires
/// the ball. Sampling is deterministic given `(coord, r, seed)` and nested in
/// `samples`, and slices are evaluated in parallel.
pub fn envelope(
    model: &Model,
    coord: SliceCoord,
    r_grid: &[f64],
    box_bound: f64,
    samples: usize,
    seed: u64,
) -> Result<RadialEnvelope, ConditionsError> {
    match (coord, model.domain()) {
        (SliceCoord::Axis(i), Domain::PositiveOrthant) => {
            if i >= model.dim() {
                return Err(ConditionsError::InvalidParameter {
                    reason: format!("axis {i} out of range for dimension {}", model.dim()),
                });
            }
        }
        (SliceCoord::Radial, Domain::UnitBall) => {}
        (c, d) => {
            return Err(ConditionsError::InvalidParameter {
                reason: format!("slice {c:?} incompatible with domain {d:?}"),
            })
        }
    }
    if r_grid.is_empty() || r_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConditionsError::InvalidParameter {
            reason: "r_grid must be nonempty and strictly increasing".into(),
        });
    }
    let max_r = if coord == SliceCoord::Radial { 1.0 } else { box_bound };
    if r_grid[0] <= 0.0 || *r_grid.last().unwrap() > max_r {
        return Err(ConditionsError::InvalidParameter {
            reason: format!("r_grid must lie in (0, {max_r}]"),
        });
    }
    let stats: Vec<Result<SliceStats, ConditionsError>> = r_grid
        .par_iter()
        .map(|&r| {
            let pts = slice_points(model, coord, r, box_bound, samples, seed);
            let mut a_plus = f64::NEG_INFINITY;
            let mut b_minus = f64::INFINITY;
            let mut b_plus = f64::NEG_INFINITY;
            let mut b_minus_arg = Vec::new();
            for x in pts {
                let (a, b) = slice_values(model, coord, &x)?;
                if a > a_plus {
                    a_plus = a;
                }
                if b < b_minus {
                    b_minus = b;
                    b_minus_arg = x.clone();
                }
                if b > b_plus {
                    b_plus = b;
                }
            }
            Ok(SliceStats { a_plus, b_minus, b_plus, b_minus_arg })
        })
        .collect();
    let mut env = RadialEnvelope {
        coord,
        r_grid: r_grid.to_vec(),
        a_plus: Vec::with_capacity(r_grid.len()),
        b_minus: Vec::with_capacity(r_grid.len()),
        b_plus: Vec::with_capacity(r_grid.len()),
        b_minus_arg: Vec::with_capacity(r_grid.len()),
        box_bound,
        samples_per_slice: samples,
        seed,
    };
    for s in stats {
        let s = s?;
        if !s.a_plus.is_finite() {
            return Err(ConditionsError::InvalidParameter {
                reason: "a_plus not finite on a slice".into(),
            });
        }
        env.a_plus.push(s.a_plus);
        env.b_minus.push(s.b_minus);
        env.b_plus.push(s.b_plus);
        env.b_minus_arg.push(s.b_minus_arg);
    }
    Ok(env)
}

// ---------------------------------------------------------------------------
// condition reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub label: String,
    pub state: Vec<f64>,
    pub value: f64,
}

/// Outcome of one assumption audit. A `fail` verdict always carries at least
/// one witness with negative slack.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub assumption: String,
    pub verdict: Verdict,
    /// Worst slack observed; negative on failure.
    pub margin: f64,
    pub witnesses: Vec<Witness>,
    pub details: BTreeMap<String, f64>,
    pub config: BTreeMap<String, String>,
}

impl ConditionReport {
    fn new(assumption: &str) -> ConditionReport {
        ConditionReport {
            assumption: assumption.into(),
            verdict: Verdict::Inconclusive,
            margin: f64::NAN,
            witnesses: Vec::new(),
            details: BTreeMap::new(),
            config: BTreeMap::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryDriftOptions {
    /// Width of the boundary band `min_j x_j < delta`.
    pub delta: f64,
    pub box_bound: f64,
    pub band_samples: usize,
    /// `sigma_tilde(r)` as an expression in `x1`; enables part (iii).
    pub sigma_tilde: Option<Expr>,
    /// Error out if the variance cap is requested without `sigma_tilde`.
    pub require_cap: bool,
    pub seed: u64,
}

impl Default for BoundaryDriftOptions {
    fn default() -> Self {
        BoundaryDriftOptions {
            delta: 0.1,
            box_bound: 10.0,
            band_samples: 512,
            sigma_tilde: None,
            require_cap: false,
            seed: 0,
        }
    }
}

fn band_points(n: usize, delta: f64, box_bound: f64, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let offset = key_offset(&[seed, 0xBA4D, delta.to_bits()]);
    (0..samples)
        .map(|j| {
            let forced = j % n;
            let mut x = vec![0.0; n];
            let mut free = 1;
            for d in 0..n {
                if d == forced {
                    x[d] = delta * halton(offset + j as u64, PRIMES[0]);
                } else {
                    x[d] = box_bound * halton(offset + j as u64, PRIMES[free % PRIMES.len()]);
                    free += 1;
                }
            }
            x
        })
        .collect()
}

/// Audits the boundary-drift conditions on an orthant model: positive
/// drift (`mu_i > 0` on a band around the boundary), drift-to-variance
/// (`r b_minus(r) > 1` on each envelope grid), and the variance cap
/// (`m_ii(x) <= n^3 sigma_tilde(x_i)^2` on the band, when `sigma_tilde` is
/// supplied). The verdict aggregates the parts with the worst margin.
pub fn check_boundary_drift(
    model: &Model,
    envelopes: &[RadialEnvelope],
    opts: &BoundaryDriftOptions,
) -> Result<ConditionReport, ConditionsError> {
    if model.domain() != Domain::PositiveOrthant {
        return Err(ConditionsError::InvalidParameter {
            reason: "boundary-drift audit applies to positive-orthant models".into(),
        });
    }
    if opts.require_cap && opts.sigma_tilde.is_none() {
        return Err(ConditionsError::MissingSigmaTilde);
    }
    let n = model.dim();
    let mut report = ConditionReport::new("boundary_drift");
    report.config.insert("delta".into(), format!("{}", opts.delta));
    report.config.insert("box_bound".into(), format!("{}", opts.box_bound));
    report.config.insert("band_samples".into(), format!("{}", opts.band_samples));
    report.config.insert("seed".into(), format!("{}", opts.seed));

    let band = band_points(n, opts.delta, opts.box_bound, opts.band_samples, opts.seed);

    // positive drift near the boundary
    let mut margin_drift = f64::INFINITY;
    let mut witness_drift: Option<(Vec<f64>, f64)> = None;
    let mut mu = vec![0.0; n];
    for x in &band {
        model.drift_into(x, &mut mu)?;
        for &m in mu.iter() {
            if m < margin_drift {
                margin_drift = m;
                witness_drift = Some((x.clone(), m));
            }
        }
    }
    report.details.insert("margin_positive_drift".into(), margin_drift);
    let pass_drift = margin_drift > 0.0;
    if !pass_drift {
        if let Some((state, value)) = witness_drift {
            report.witnesses.push(Witness { label: "positive_drift: mu_i <= 0".into(), state, value });
        }
    }

    // drift-to-variance: r * b_minus(r) > 1 on every envelope grid point
    let mut margin_ratio = f64::INFINITY;
    let mut witness_ratio: Option<(Vec<f64>, f64)> = None;
    for env in envelopes {
        for (g, (&r, &bm)) in env.r_grid.iter().zip(&env.b_minus).enumerate() {
            let slack = r * bm - 1.0;
            if slack < margin_ratio {
                margin_ratio = slack;
                witness_ratio = Some((env.b_minus_arg[g].clone(), slack));
            }
        }
    }
    report.details.insert("margin_drift_to_variance".into(), margin_ratio);
    let pass_ratio = margin_ratio > 0.0;
    if !pass_ratio {
        if let Some((state, value)) = witness_ratio {
            report.witnesses.push(Witness { label: "drift_to_variance: r b_minus(r) <= 1".into(), state, value });
        }
    }

    // variance cap: m_ii controlled by sigma_tilde on the band
    let mut pass_cap = true;
    if let Some(st) = &opts.sigma_tilde {
        let n3 = (n * n * n) as f64;
        let mut margin_cap = f64::INFINITY;
        let mut witness_cap: Option<(Vec<f64>, f64)> = None;
        let mut row = vec![0.0; n];
        for x in &band {
            for i in 0..n {
                let mii = model.m_ii(x, i, &mut row)?;
                let s = st.evaluate(&[x[i]]).map_err(ModelError::from)?;
                let slack = n3 * s * s - mii;
                if slack < margin_cap {
                    margin_cap = slack;
                    witness_cap = Some((x.clone(), slack));
                }
            }
        }
        report.details.insert("margin_variance_cap".into(), margin_cap);
        pass_cap = margin_cap >= 0.0;
        if !pass_cap {
            if let Some((state, value)) = witness_cap {
                report.witnesses.push(Witness {
                    label: "variance_cap: m_ii > n^3 sigma_tilde^2".into(),
                    state,
                    value,
                });
            }
        }
    }

    report.margin = report.details.values().fold(f64::INFINITY, |a, &v| a.min(v));
    report.verdict = if pass_drift && pass_ratio && pass_cap { Verdict::Pass } else { Verdict::Fail };
    Ok(report)
}

/// Audits the componentwise modulus condition on the diffusion entries:
/// estimates `C_hat = max |sigma_ij(x) - sigma_ij(y)| / rho(|x_i - y_i|)`
/// over sampled pairs with `|x - y| <= epsilon`, half of them focused at the
/// origin with separations shrinking like `k^-3` so that the estimate blows
/// up under an exponent mismatch. Passes when `C_hat` is finite and stable
/// between the quarter sample and the full sample (ratio < 2).
pub fn check_diffusion_modulus(
    model: &Model,
    modulus: &Modulus,
    box_bound: f64,
    pairs: usize,
    seed: u64,
) -> Result<ConditionReport, ConditionsError> {
    if pairs < 8 {
        return Err(ConditionsError::InvalidParameter { reason: "need at least 8 pairs".into() });
    }
    let n = model.dim();
    let eps = modulus.epsilon().min(box_bound).max(1e-12);
    let offset = key_offset(&[seed, 0x30D, box_bound.to_bits()]);
    let orthant = model.domain() == Domain::PositiveOrthant;
    let mut sig_x = vec![0.0; n * n];
    let mut sig_y = vec![0.0; n * n];
    let mut ratios: Vec<f64> = Vec::with_capacity(pairs);
    for k in 0..pairs {
        let (x, y): (Vec<f64>, Vec<f64>) = if k % 2 == 0 {
            // global pair inside the box, separation up to eps
            let mut x = vec![0.0; n];
            let mut dir = vec![0.0; n];
            for d in 0..n {
                let u = halton(offset + k as u64, PRIMES[d % PRIMES.len()]);
                x[d] = if orthant { u * box_bound } else { (2.0 * u - 1.0) * box_bound };
                let v = halton(offset + k as u64, PRIMES[(d + n) % PRIMES.len()]);
                dir[d] = 2.0 * v - 1.0;
            }
            if model.domain() == Domain::UnitBall {
                let r = norm_sq(&x).sqrt();
                if r >= 1.0 {
                    for v in &mut x {
                        *v *= 0.9 / r;
                    }
                }
            }
            let nrm = norm_sq(&dir).sqrt().max(1e-300);
            let h = eps * halton(offset + k as u64, PRIMES[(2 * n) % PRIMES.len()]);
            let y = x
                .iter()
                .zip(&dir)
                .map(|(xi, di)| {
                    let yi = xi + h * di / nrm;
                    if orthant {
                        yi.max(0.0)
                    } else {
                        yi
                    }
                })
                .collect();
            (x, y)
        } else {
            // origin-focused pair with separation shrinking like k^-3
            let kp = (k / 2 + 1) as f64;
            let h = (eps * kp.powi(-3)).max(1e-10);
            let x = vec![1.5 * h; n];
            let y = vec![0.5 * h; n];
            (x, y)
        };
        model.diffusion_into(&x, &mut sig_x)?;
        model.diffusion_into(&y, &mut sig_y)?;
        let mut worst = 0.0f64;
        for i in 0..n {
            let denom = modulus.rho((x[i] - y[i]).abs());
            if denom <= 0.0 {
                continue;
            }
            for j in 0..n {
                let num = (sig_x[i * n + j] - sig_y[i * n + j]).abs();
                worst = worst.max(num / denom);
            }
        }
        ratios.push(worst);
    }
    let c_hat_quarter = ratios[..pairs / 4].iter().fold(0.0f64, |a, &b| a.max(b));
    let c_hat = ratios.iter().fold(0.0f64, |a, &b| a.max(b));

    let mut report = ConditionReport::new("diffusion_modulus");
    report.config.insert("pairs".into(), format!("{pairs}"));
    report.config.insert("box_bound".into(), format!("{box_bound}"));
    report.config.insert("epsilon".into(), format!("{eps}"));
    report.config.insert("rho".into(), modulus.name().into());
    report.config.insert("seed".into(), format!("{seed}"));
    report.details.insert("c_hat".into(), c_hat);
    report.details.insert("c_hat_quarter".into(), c_hat_quarter);
    if !c_hat.is_finite() {
        report.verdict = Verdict::Fail;
        report.margin = f64::NEG_INFINITY;
        return Ok(report);
    }
    if c_hat == 0.0 {
        // constant diffusion: trivially within any modulus
        report.verdict = Verdict::Pass;
        report.margin = 2.0;
        report.details.insert("stability_ratio".into(), 1.0);
        return Ok(report);
    }
    if c_hat_quarter == 0.0 {
        report.verdict = Verdict::Inconclusive;
        report.margin = f64::NAN;
        return Ok(report);
    }
    let ratio = c_hat / c_hat_quarter;
    report.details.insert("stability_ratio".into(), ratio);
    report.margin = 2.0 - ratio;
    report.verdict = if ratio < 2.0 { Verdict::Pass } else { Verdict::Fail };
    Ok(report)
}

/// Which coefficient field a growth audit applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRef {
    Mu,
    Sigma,
}

/// Estimates `g(R) = max_{|x| = R} |field(x)| / (1 + |x|)` on each sphere of
/// `r_list` and passes when the estimates stay within a factor 4 of each
/// other.
pub fn check_linear_growth(
    model: &Model,
    field: FieldRef,
    r_list: &[f64],
    samples: usize,
    seed: u64,
) -> Result<ConditionReport, ConditionsError> {
    if r_list.len() < 2 || r_list.windows(2).any(|w| w[0] >= w[1]) || r_list[0] <= 0.0 {
        return Err(ConditionsError::InvalidParameter {
            reason: "r_list must be increasing with at least two positive radii".into(),
        });
    }
    let n = model.dim();
    let offset = key_offset(&[seed, 0x9105, field as u64]);
    let mut report = ConditionReport::new("linear_growth");
    report.config.insert("field".into(), format!("{field:?}"));
    report.config.insert("samples".into(), format!("{samples}"));
    report.config.insert("seed".into(), format!("{seed}"));
    let mut g_of_r = Vec::with_capacity(r_list.len());
    let mut worst_witness: Option<(Vec<f64>, f64)> = None;
    let mut mu = vec![0.0; n];
    let mut sigma = vec![0.0; n * n];
    for (ri, &r) in r_list.iter().enumerate() {
        let radius = if model.domain() == Domain::UnitBall { r.min(1.0 - 1e-9) } else { r };
        let mut g = 0.0f64;
        for j in 0..samples.max(1) {
            let mut x = vec![0.0; n];
            for (d, xd) in x.iter_mut().enumerate() {
                let u1 = halton(offset + (ri * samples + j) as u64, PRIMES[(2 * d) % PRIMES.len()]);
                let u2 = halton(offset + (ri * samples + j) as u64, PRIMES[(2 * d + 1) % PRIMES.len()]);
                let gauss = (-2.0 * u1.max(1e-12).ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                *xd = if model.domain() == Domain::PositiveOrthant { gauss.abs() } else { gauss };
            }
            let nrm = norm_sq(&x).sqrt().max(1e-300);
            for v in &mut x {
                *v *= radius / nrm;
            }
            let value = match field {
                FieldRef::Mu => {
                    model.drift_into(&x, &mut mu)?;
                    norm_sq(&mu).sqrt()
                }
                FieldRef::Sigma => {
                    model.diffusion_into(&x, &mut sigma)?;
                    norm_sq(&sigma).sqrt()
                }
            };
            let ratio = value / (1.0 + radius);
            if ratio > g {
                g = ratio;
                if ri == r_list.len() - 1 {
                    worst_witness = Some((x.clone(), ratio));
                }
            }
        }
        report.details.insert(format!("g_at_{r}"), g);
        g_of_r.push(g);
    }
    let g_max = g_of_r.iter().fold(0.0f64, |a, &b| a.max(b));
    let g_min = g_of_r.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let (ratio, pass) = if g_max == 0.0 {
        (1.0, true)
    } else if g_min == 0.0 {
        (f64::INFINITY, false)
    } else {
        let q = g_max / g_min;
        (q, q < 4.0)
    };
    report.details.insert("growth_ratio".into(), ratio);
    report.margin = 4.0 - ratio;
    report.verdict = if pass { Verdict::Pass } else { Verdict::Fail };
    if !pass {
        if let Some((state, value)) = worst_witness {
            report.witnesses.push(Witness { label: "growth at largest radius".into(), state, value });
        }
    }
    Ok(report)
}

/// The unit-ball confinement condition `kappa = c (1 - sqrt(n) |theta|) >= 2`.
pub fn check_unit_ball_condition(c: f64, theta: &Theta, n: usize) -> ConditionReport {
    let kappa = crate::model::unit_ball_kappa(c, theta, n);
    let mut report = ConditionReport::new("unit_ball kappa >= 2");
    report.config.insert("c".into(), format!("{c}"));
    report.config.insert("theta_mag".into(), format!("{}", theta.magnitude()));
    report.config.insert("n".into(), format!("{n}"));
    report.details.insert("kappa".into(), kappa);
    report.margin = kappa - 2.0;
    report.verdict = if kappa >= 2.0 { Verdict::Pass } else { Verdict::Fail };
    if !report.passed() {
        report.witnesses.push(Witness {
            label: "kappa below 2".into(),
            state: vec![c, theta.magnitude(), n as f64],
            value: kappa,
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Expr};

    fn lit(v: f64) -> Expr {
        Expr::Lit(v)
    }

    fn multicir(mu: f64) -> Model {
        Model::multicir(2, vec![lit(mu), lit(mu)], None).unwrap()
    }

    #[test]
    fn envelope_multicir_identity_base() {
        // a_i(x) = x_i on the slice, so a_plus(r) = r for every r and any R
        let model = multicir(3.0);
        let grid = uniform_r_grid(5.0, 16);
        let env = envelope(&model, SliceCoord::Axis(0), &grid, 10.0, 64, 1).unwrap();
        for (&r, &a) in env.r_grid.iter().zip(&env.a_plus) {
            assert!((a - r).abs() < 1e-12, "a_plus({r}) = {a}");
        }
        // b_i = 3 / r constant over the slice
        for (&r, &b) in env.r_grid.iter().zip(&env.b_minus) {
            assert!((b - 3.0 / r).abs() < 1e-12, "b_minus({r}) = {b}");
        }
        // interpolation is exact for the linear a_plus
        assert!((env.a_plus_at(2.34) - 2.34).abs() < 1e-12);
        assert!((env.a_plus_at(9.7) - 9.7).abs() < 1e-9); // linear extension
    }

    #[test]
    fn envelope_single_point_slice_in_1d() {
        let model = Model::multicir(1, vec![lit(2.0)], None).unwrap();
        let env = envelope(&model, SliceCoord::Axis(0), &[0.5, 1.0], 10.0, 99, 7).unwrap();
        assert!((env.a_plus[0] - 0.5).abs() < 1e-15);
        assert!((env.b_minus[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn envelope_nested_sampling_is_monotone() {
        // state-dependent base makes the slice sup nontrivial
        let base = vec![
            parse("1 + x2/10", 2).unwrap(),
            parse("0", 2).unwrap(),
            parse("0", 2).unwrap(),
            parse("1", 2).unwrap(),
        ];
        let model = Model::multicir(2, vec![lit(1.0), lit(1.0)], Some(base)).unwrap();
        let grid = uniform_r_grid(2.0, 8);
        let coarse = envelope(&model, SliceCoord::Axis(0), &grid, 10.0, 32, 5).unwrap();
        let fine = envelope(&model, SliceCoord::Axis(0), &grid, 10.0, 128, 5).unwrap();
        for g in 0..grid.len() {
            assert!(fine.a_plus[g] >= coarse.a_plus[g] - 1e-15);
            assert!(fine.b_minus[g] <= coarse.b_minus[g] + 1e-15);
        }
    }

    #[test]
    fn envelope_degenerate_slice_reported() {
        let base = vec![parse("0", 1).unwrap()];
        let model = Model::multicir(1, vec![lit(1.0)], Some(base)).unwrap();
        let err = envelope(&model, SliceCoord::Axis(0), &[1.0], 10.0, 4, 0).unwrap_err();
        assert!(matches!(err, ConditionsError::DegenerateSlice { .. }));
    }

    #[test]
    fn envelope_radial_ball() {
        let model = Model::unit_ball(2, 4.0, Theta::Scalar(0.0)).unwrap();
        let grid = uniform_r_grid(0.9, 9);
        let env = envelope(&model, SliceCoord::Radial, &grid, 1.0, 32, 3).unwrap();
        for (&r, &a) in env.r_grid.iter().zip(&env.a_plus) {
            let expect = 8.0 * r * (1.0 - r);
            assert!((a - expect).abs() < 1e-10, "a_plus({r}) = {a}, want {expect}");
        }
        // theta = 0: b is constant on the slice and equals the ratio of the
        // radial drift to the variance
        for (&r, &b) in env.r_grid.iter().zip(&env.b_plus) {
            let expect = 2.0 * (2.0 - (2.0 + 4.0) * r) / (8.0 * r * (1.0 - r));
            assert!((b - expect).abs() < 1e-9, "b_plus({r}) = {b}, want {expect}");
        }
    }

    #[test]
    fn boundary_drift_passes_on_reference_and_fails_on_weak_drift() {
        let grid = uniform_r_grid(5.0, 20);
        let strong = multicir(3.0);
        let envs: Vec<RadialEnvelope> = (0..2)
            .map(|i| envelope(&strong, SliceCoord::Axis(i), &grid, 10.0, 64, 1).unwrap())
            .collect();
        let mut opts = BoundaryDriftOptions { sigma_tilde: Some(parse("sqrt(x1)", 1).unwrap()), ..Default::default() };
        let report = check_boundary_drift(&strong, &envs, &opts).unwrap();
        assert!(report.passed(), "margins {:?}", report.details);
        // margin of (ii) is r * (3/r) - 1 = 2 everywhere
        assert!((report.details["margin_drift_to_variance"] - 2.0).abs() < 1e-9);

        let weak = multicir(0.1);
        let envs_weak: Vec<RadialEnvelope> = (0..2)
            .map(|i| envelope(&weak, SliceCoord::Axis(i), &grid, 10.0, 64, 1).unwrap())
            .collect();
        opts.sigma_tilde = None;
        let report = check_boundary_drift(&weak, &envs_weak, &opts).unwrap();
        assert_eq!(report.verdict, Verdict::Fail);
        assert!((report.details["margin_drift_to_variance"] - (0.1 - 1.0)).abs() < 1e-9);
        assert!(!report.witnesses.is_empty());
        assert!(report.witnesses.iter().any(|w| w.value < 0.0));
    }

    #[test]
    fn boundary_drift_sign_witness() {
        // mu_1(x) = x_1 - delta/2 dips negative inside the band
        let mu = vec![parse("x1 - 0.05", 2).unwrap(), lit(1.0)];
        let model = Model::multicir(2, mu, None).unwrap();
        let grid = uniform_r_grid(2.0, 4);
        let envs = vec![envelope(&model, SliceCoord::Axis(0), &grid, 10.0, 16, 1).unwrap()];
        let report = check_boundary_drift(&model, &envs, &BoundaryDriftOptions::default()).unwrap();
        assert_eq!(report.verdict, Verdict::Fail);
        assert!(report.details["margin_positive_drift"] < 0.0);
    }

    #[test]
    fn boundary_drift_requires_sigma_tilde_when_forced() {
        let model = multicir(3.0);
        let opts = BoundaryDriftOptions { require_cap: true, ..Default::default() };
        assert!(matches!(check_boundary_drift(&model, &[], &opts), Err(ConditionsError::MissingSigmaTilde)));
    }

    #[test]
    fn modulus_audit_constant_sigma_passes_with_zero_estimate() {
        let model =
            Model::custom(1, Domain::FullSpace, vec![lit(0.0)], vec![lit(2.0)]).unwrap();
        let report = check_diffusion_modulus(&model, &Modulus::sqrt(), 5.0, 256, 0).unwrap();
        assert!(report.passed());
        assert_eq!(report.details["c_hat"], 0.0);
    }

    #[test]
    fn modulus_audit_sqrt_diffusion_matches_sqrt_modulus() {
        // |sqrt(a) - sqrt(b)| <= sqrt(|a - b|): estimate stays at most 1
        let model = Model::multicir(1, vec![lit(1.0)], None).unwrap();
        let report = check_diffusion_modulus(&model, &Modulus::sqrt(), 5.0, 1024, 0).unwrap();
        assert!(report.passed(), "details {:?}", report.details);
        assert!(report.details["c_hat"] <= 1.0 + 1e-9);
    }

    #[test]
    fn modulus_audit_quarter_power_against_sqrt_modulus_fails() {
        let sigma = vec![parse("pow(abs(x1), 0.25)", 1).unwrap()];
        let model = Model::custom(1, Domain::PositiveOrthant, vec![lit(1.0)], sigma).unwrap();
        let report = check_diffusion_modulus(&model, &Modulus::sqrt(), 5.0, 1024, 0).unwrap();
        assert_eq!(report.verdict, Verdict::Fail);
        assert!(report.details["stability_ratio"] >= 2.0);
    }

    #[test]
    fn linear_growth_verdicts() {
        // constant drift: g(R) decreasing, ratio (1+2)/(1+8) stays under 4
        let constant = Model::custom(1, Domain::FullSpace, vec![lit(3.0)], vec![lit(0.0)]).unwrap();
        let report = check_linear_growth(&constant, FieldRef::Mu, &[2.0, 4.0, 8.0], 32, 0).unwrap();
        assert!(report.passed(), "{:?}", report.details);

        // quadratic growth fails
        let quad_model =
            Model::custom(1, Domain::FullSpace, vec![lit(0.0)], vec![parse("x1^2", 1).unwrap()]).unwrap();
        let report = check_linear_growth(&quad_model, FieldRef::Sigma, &[2.0, 4.0, 8.0], 32, 0).unwrap();
        assert_eq!(report.verdict, Verdict::Fail);

        // square-root diffusion with bounded base passes
        let cir = multicir(3.0);
        let report = check_linear_growth(&cir, FieldRef::Sigma, &[2.0, 4.0, 8.0], 32, 0).unwrap();
        assert!(report.passed(), "{:?}", report.details);
    }

    #[test]
    fn unit_ball_condition_tabulated() {
        let r = check_unit_ball_condition(4.0, &Theta::Scalar(0.0), 2);
        assert!(r.passed());
        assert!((r.details["kappa"] - 4.0).abs() < 1e-15);

        let r = check_unit_ball_condition(1.0, &Theta::Scalar(0.0), 2);
        assert_eq!(r.verdict, Verdict::Fail);
        assert!((r.details["kappa"] - 1.0).abs() < 1e-15);

        let r = check_unit_ball_condition(8.0, &Theta::Scalar(0.25), 4);
        assert!(r.passed());
        assert!((r.details["kappa"] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn unit_ball_condition_monotone_in_c() {
        let mut last_pass = false;
        for c in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let pass = check_unit_ball_condition(c, &Theta::Scalar(0.1), 2).passed();
            assert!(pass || !last_pass || !pass, "monotone");
            if last_pass {
                assert!(pass, "raising c must not flip pass to fail");
            }
            last_pass = pass;
        }
    }
}

//! Modulus-of-continuity ladders: smoothed absolute values built from a
//! strictly increasing modulus `rho` with `rho(0) = 0` and a divergent
//! integral of `rho^-2` at zero.
//!
//! The construction proceeds in three steps:
//!
//! 1. a decreasing sequence `1 = s_0 > s_1 > ... > s_K > 0` with
//!    `int_{s_k}^{s_{k-1}} rho(t)^-2 dt = k` for each `k >= 1`;
//! 2. continuous bumps `psi_k` supported in `(s_k, s_{k-1})` with
//!    `0 <= psi_k(s) <= 2 / (k rho(s)^2)` and unit mass;
//! 3. the smoothed absolute values
//!    `phi_k(t) = int_0^{|t|} int_0^s psi_k(u) du ds`, which are C^2, have
//!    derivative in `[0, 1]`, curvature at most `2 / (k rho(|t|)^2)`, and
//!    increase to `|t|` as `k` grows.
//!
//! Each `psi_k` is realized as a trapezoidal plateau under the cap
//! `2 / (k rho^2)`: the ramp width is calibrated by bisection until the bump
//! has unit mass (a full plateau carries mass exactly 2, so a root always
//! exists or the capped triangle is rescaled). Cumulative integrals are
//! cached on a geometric grid over each support interval, with the ramp kink
//! points inserted as grid nodes so panel quadrature never straddles a kink.

use std::fmt;
use std::sync::Arc;

use crate::expr::Expr;
use crate::quad::{self, QuadError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModulusError {
    #[error("divergence probe failed: {reason}")]
    DivergenceProbeFailed { reason: String },
    #[error("invalid modulus: {reason}")]
    InvalidModulus { reason: String },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("bump calibration failed at k = {k}: mass {mass} not within 1e-8 of 1")]
    CalibrationFailure { k: usize, mass: f64 },
    #[error("ladder underflow at k = {k}: s_k below 1e-300")]
    Underflow { k: usize },
}

type RhoFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type IntegralFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A modulus `rho` together with the validity window `epsilon` of the
/// componentwise continuity condition it is used to audit, and an optional
/// closed form for `int_a^b rho(u)^-2 du` used instead of quadrature when
/// available.
#[derive(Clone)]
pub struct Modulus {
    name: String,
    rho: RhoFn,
    epsilon: f64,
    closed_form: Option<IntegralFn>,
}

impl fmt::Debug for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Modulus")
            .field("name", &self.name)
            .field("epsilon", &self.epsilon)
            .field("closed_form", &self.closed_form.is_some())
            .finish()
    }
}

impl Modulus {
    /// `rho(u) = sqrt(u)`, the Hölder-1/2 modulus.
    pub fn sqrt() -> Modulus {
        Modulus {
            name: "sqrt".into(),
            rho: Arc::new(|u: f64| u.sqrt()),
            epsilon: 1.0,
            closed_form: Some(Arc::new(|a: f64, b: f64| (b / a).ln())),
        }
    }

    /// `rho(u) = u`.
    pub fn linear() -> Modulus {
        Modulus {
            name: "linear".into(),
            rho: Arc::new(|u: f64| u),
            epsilon: 1.0,
            closed_form: Some(Arc::new(|a: f64, b: f64| 1.0 / a - 1.0 / b)),
        }
    }

    /// `rho(u) = u^p` for `p` in `[1/2, 1]`.
    pub fn power(p: f64) -> Result<Modulus, ModulusError> {
        if !(0.5..=1.0).contains(&p) {
            return Err(ModulusError::InvalidModulus {
                reason: format!("power exponent must lie in [0.5, 1], got {p}"),
            });
        }
        if p == 0.5 {
            return Ok(Modulus::sqrt());
        }
        if p == 1.0 {
            return Ok(Modulus::linear());
        }
        Ok(Modulus {
            name: format!("power({p})"),
            rho: Arc::new(move |u: f64| u.powf(p)),
            epsilon: 1.0,
            closed_form: Some(Arc::new(move |a: f64, b: f64| {
                (a.powf(1.0 - 2.0 * p) - b.powf(1.0 - 2.0 * p)) / (2.0 * p - 1.0)
            })),
        })
    }

    /// A modulus from an arbitrary function; all integrals fall back to
    /// adaptive quadrature.
    pub fn from_fn(name: &str, rho: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Modulus {
        Modulus {
            name: name.into(),
            rho: Arc::new(rho),
            epsilon: 1.0,
            closed_form: None,
        }
    }

    /// A modulus from a one-variable expression in `x1`.
    pub fn from_expr(name: &str, expr: Expr) -> Modulus {
        Modulus::from_fn(name, move |u| expr.evaluate(&[u]).unwrap_or(f64::NAN))
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Modulus {
        self.epsilon = epsilon;
        self
    }

    /// Strips the closed form so that integrals go through quadrature; used
    /// to cross-check the numerical route against symbolic values.
    pub fn without_closed_form(mut self) -> Modulus {
        self.closed_form = None;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn rho(&self, u: f64) -> f64 {
        (self.rho)(u)
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed_form.is_some()
    }

    /// `int_a^b rho(u)^-2 du` for `0 < a <= b`.
    pub fn inv_sq_integral(&self, a: f64, b: f64) -> Result<f64, ModulusError> {
        if let Some(cf) = &self.closed_form {
            return Ok(cf(a, b));
        }
        let rho = Arc::clone(&self.rho);
        let f = move |u: f64| {
            let r = rho(u);
            1.0 / (r * r)
        };
        // two-phase: rough estimate sets the scale, then refine relative to it
        let rough = quad::adaptive_simpson(&f, a, b, 1e-4)?;
        let tol = (1e-12 * rough.abs()).max(1e-11);
        Ok(quad::adaptive_simpson(&f, a, b, tol)?)
    }

    /// Audits the structural requirements on `rho`: `rho(0) = 0`, strict
    /// increase on a sampled grid, and divergence of `int_0 rho^-2`. The
    /// divergence evidence is the sequence of integrals over `[delta, 1]`
    /// for `delta = 1e-2 .. 1e-8`; the probe passes when the per-decade
    /// increments do not decay (ratio at least 0.9), which separates the
    /// divergent family (`rho(u) = u^p`, `p >= 1/2`, ratio >= 1) from the
    /// convergent one (`p < 1/2`, ratio `10^(1-2p) < 1`).
    pub fn divergence_probe(&self) -> Result<DivergenceEvidence, ModulusError> {
        let r0 = self.rho(0.0);
        if r0.abs() > 1e-12 || r0.is_nan() {
            return Err(ModulusError::InvalidModulus {
                reason: format!("rho(0) = {r0}, expected 0"),
            });
        }
        let mut prev = 0.0;
        for i in 1..=64 {
            let u = i as f64 / 64.0;
            let r = self.rho(u);
            if !r.is_finite() || r <= prev {
                return Err(ModulusError::InvalidModulus {
                    reason: format!("rho not strictly increasing near u = {u}"),
                });
            }
            prev = r;
        }
        let deltas: Vec<f64> = (0..7).map(|j| 10f64.powi(-2 - j)).collect();
        let mut integrals = Vec::with_capacity(deltas.len());
        for &d in &deltas {
            let v = self.inv_sq_integral(d, 1.0)?;
            if !v.is_finite() {
                return Err(ModulusError::DivergenceProbeFailed {
                    reason: format!("integral over [{d:e}, 1] is not finite"),
                });
            }
            integrals.push(v);
        }
        let mut prev_inc: Option<f64> = None;
        for w in integrals.windows(2) {
            let inc = w[1] - w[0];
            if inc <= 0.0 {
                return Err(ModulusError::DivergenceProbeFailed {
                    reason: "partial integrals not strictly increasing".into(),
                });
            }
            if let Some(p) = prev_inc {
                if inc / p < 0.9 {
                    return Err(ModulusError::DivergenceProbeFailed {
                        reason: format!(
                            "per-decade increments decay (ratio {:.3}); integral of rho^-2 converges",
                            inc / p
                        ),
                    });
                }
            }
            prev_inc = Some(inc);
        }
        Ok(DivergenceEvidence { deltas, integrals })
    }
}

/// Partial integrals of `rho^-2` over `[delta_j, 1]` recorded by the probe.
#[derive(Debug, Clone)]
pub struct DivergenceEvidence {
    pub deltas: Vec<f64>,
    pub integrals: Vec<f64>,
}

/// The sequence `1 = s_0 > s_1 > ... > s_K` with unit-indexed integral mass:
/// `int_{s_k}^{s_{k-1}} rho^-2 = k`. Each `s_k` is found by a bracketed
/// Newton iteration on the lower endpoint: the derivative of the integral in
/// its lower limit is `-rho(s)^-2`, and integral values are updated
/// incrementally over the short interval between successive iterates.
pub fn build_sk(modulus: &Modulus, k_max: usize) -> Result<Vec<f64>, ModulusError> {
    modulus.divergence_probe()?;
    let mut s = Vec::with_capacity(k_max + 1);
    s.push(1.0);
    for k in 1..=k_max {
        let hi = s[k - 1];
        let target = k as f64;
        // running value of I(cur) = int_cur^hi rho^-2
        let mut cur = hi;
        let mut i_cur = 0.0;
        let step_to = |from: f64, to: f64, acc: f64| -> Result<f64, ModulusError> {
            if to < from {
                Ok(acc + modulus.inv_sq_integral(to, from)?)
            } else {
                Ok(acc - modulus.inv_sq_integral(from, to)?)
            }
        };
        // walk down until the mass target is bracketed
        let mut lo = hi * 0.5;
        let mut i_lo = step_to(cur, lo, i_cur)?;
        while i_lo < target {
            cur = lo;
            i_cur = i_lo;
            lo *= 0.25;
            if lo < 1e-300 {
                return Err(ModulusError::Underflow { k });
            }
            i_lo = step_to(cur, lo, i_cur)?;
        }
        let mut bracket = (lo, cur.min(hi));
        cur = lo;
        i_cur = i_lo;
        let mut root = lo;
        for _ in 0..80 {
            let g = i_cur - target;
            let rho = modulus.rho(cur);
            let delta = g * rho * rho; // Newton step: dI/d(lower) = -rho^-2
            root = cur;
            if g.abs() <= 1e-10 && delta.abs() <= 1e-11 * cur {
                break;
            }
            if g > 0.0 {
                bracket.0 = cur;
            } else {
                bracket.1 = cur;
            }
            let mut next = cur + delta;
            if next <= bracket.0 || next >= bracket.1 {
                next = (bracket.0 * bracket.1).sqrt();
            }
            i_cur = step_to(cur, next, i_cur)?;
            cur = next;
        }
        if root < 1e-300 {
            return Err(ModulusError::Underflow { k });
        }
        s.push(root);
    }
    Ok(s)
}

/// One calibrated bump and its cached cumulative integrals.
#[derive(Debug, Clone)]
struct Bump {
    k: usize,
    lo: f64,
    hi: f64,
    ramp: f64,
    scale: f64,
    mass: f64,
    /// geometric grid over `[lo, hi]` with the two ramp kinks inserted
    nodes: Vec<f64>,
    /// `Psi(s) = int_0^s psi` at each node
    psi_cum: Vec<f64>,
    /// `Phi(s) = int_0^s Psi` at each node
    phi_cum: Vec<f64>,
}

impl Bump {
    fn psi_at(&self, modulus: &Modulus, s: f64) -> f64 {
        if s <= self.lo || s >= self.hi {
            return 0.0;
        }
        let ramp = ((s - self.lo) / self.ramp).min((self.hi - s) / self.ramp).min(1.0);
        let r = modulus.rho(s);
        self.scale * ramp * 2.0 / (self.k as f64 * r * r)
    }

    fn psi_cum_at(&self, modulus: &Modulus, s: f64) -> f64 {
        if s <= self.lo {
            return 0.0;
        }
        if s >= self.hi {
            return self.mass;
        }
        let i = node_segment(&self.nodes, s);
        let (a, pa) = (self.nodes[i], self.psi_cum[i]);
        // trapezoid over the partial panel; panels are narrow enough that
        // psi is close to linear across them
        let fa = self.psi_at(modulus, a);
        let fs = self.psi_at(modulus, s);
        pa + 0.5 * (fa + fs) * (s - a)
    }

    fn phi_cum_at(&self, modulus: &Modulus, s: f64) -> f64 {
        if s <= self.lo {
            return 0.0;
        }
        if s >= self.hi {
            let end = *self.phi_cum.last().unwrap();
            return end + (s - self.hi) * self.mass;
        }
        let i = node_segment(&self.nodes, s);
        let (a, fa) = (self.nodes[i], self.psi_cum[i]);
        let fs = self.psi_cum_at(modulus, s);
        self.phi_cum[i] + 0.5 * (fa + fs) * (s - a)
    }
}

fn node_segment(nodes: &[f64], s: f64) -> usize {
    match nodes.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
        Ok(i) => i.min(nodes.len() - 2),
        Err(i) => i.saturating_sub(1).min(nodes.len() - 2),
    }
}

/// Number of geometric panels per bump support.
const GRID_PANELS: usize = 4096;

/// The full ladder: `s_k` sequence plus calibrated bumps with cached
/// cumulative integrals. Immutable after construction; evaluation is pure.
#[derive(Debug, Clone)]
pub struct ModulusLadder {
    modulus: Modulus,
    s: Vec<f64>,
    bumps: Vec<Bump>,
}

impl ModulusLadder {
    pub fn build(modulus: Modulus, k_max: usize) -> Result<ModulusLadder, ModulusError> {
        let s = build_sk(&modulus, k_max)?;
        let mut bumps = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            bumps.push(build_psi(&modulus, k, s[k], s[k - 1])?);
        }
        Ok(ModulusLadder { modulus, s, bumps })
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn k_max(&self) -> usize {
        self.bumps.len()
    }

    /// `s_0..s_K`, decreasing.
    pub fn s(&self) -> &[f64] {
        &self.s
    }

    fn bump(&self, k: usize) -> &Bump {
        assert!(k >= 1 && k <= self.bumps.len(), "k = {k} out of range");
        &self.bumps[k - 1]
    }

    /// The bump `psi_k(s)`.
    pub fn psi(&self, k: usize, s: f64) -> f64 {
        self.bump(k).psi_at(&self.modulus, s)
    }

    /// `Psi_k(s) = int_0^s psi_k`.
    pub fn psi_cumulative(&self, k: usize, s: f64) -> f64 {
        self.bump(k).psi_cum_at(&self.modulus, s)
    }

    /// Total mass of `psi_k` as integrated on the cached grid (1 within 1e-8).
    pub fn psi_mass(&self, k: usize) -> f64 {
        self.bump(k).mass
    }

    /// `phi_k(t) = int_0^{|t|} Psi_k(s) ds`.
    pub fn phi(&self, k: usize, t: f64) -> f64 {
        self.bump(k).phi_cum_at(&self.modulus, t.abs())
    }

    /// Derivative of `phi_k` with respect to `|t|`, i.e. `Psi_k(|t|)`.
    pub fn phi_prime_abs(&self, k: usize, t: f64) -> f64 {
        self.psi_cumulative(k, t.abs())
    }

    /// Second derivative `psi_k(|t|)`; at `t = 0` this is the one-sided limit
    /// (zero, since the support stays away from zero).
    pub fn phi_second(&self, k: usize, t: f64) -> f64 {
        self.psi(k, t.abs())
    }

    /// `phi_bar_k(x) = sum_i phi_k(x_i)`; increases to the l1 norm of `x`.
    pub fn phi_bar(&self, k: usize, x: &[f64]) -> f64 {
        x.iter().map(|&v| self.phi(k, v)).sum()
    }

    /// Curvature cap `2 / (k rho(|t|)^2)`.
    pub fn curvature_bound(&self, k: usize, t: f64) -> f64 {
        let r = self.modulus.rho(t.abs());
        2.0 / (k as f64 * r * r)
    }
}

/// Calibrates the trapezoidal bump for level `k` on support `(lo, hi)`:
/// ramp width by bisection so the mass reaches 1, falling back to a rescaled
/// capped triangle when even the widest ramp leaves more than unit mass.
fn build_psi(modulus: &Modulus, k: usize, lo: f64, hi: f64) -> Result<Bump, ModulusError> {
    let w_max = 0.5 * (hi - lo);
    let mass_of = |ramp: f64, scale: f64, tol: f64| -> Result<f64, ModulusError> {
        exact_bump_mass(modulus, k, lo, hi, ramp, scale, tol)
    };
    let full = mass_of(w_max, 1.0, 1e-12)?;
    let (ramp, scale) = if full > 1.0 {
        (w_max, 1.0 / full)
    } else {
        // mass(w) decreases from 2 (w -> 0) to `full` <= 1: bracketed root
        let g = |w: f64| mass_of(w, 1.0, 1e-10).map(|m| m - 1.0).unwrap_or(f64::NAN);
        let w = quad::bisect(&g, w_max * 1e-12, w_max, 1e-11, 1e-9)?;
        (w, 1.0)
    };
    let mass = mass_of(ramp, scale, 1e-12)?;
    if (mass - 1.0).abs() > 1e-8 {
        return Err(ModulusError::CalibrationFailure { k, mass });
    }
    let mut bump = tabulate_bump(modulus, k, lo, hi, ramp, scale);
    bump.mass = *bump.psi_cum.last().unwrap();
    if (bump.mass - 1.0).abs() > 1e-8 {
        return Err(ModulusError::CalibrationFailure { k, mass: bump.mass });
    }
    Ok(bump)
}

/// Mass of the bump via adaptive quadrature on the three smooth pieces
/// (ramp, plateau, ramp) so no panel straddles a kink.
fn exact_bump_mass(
    modulus: &Modulus,
    k: usize,
    lo: f64,
    hi: f64,
    ramp: f64,
    scale: f64,
    tol: f64,
) -> Result<f64, ModulusError> {
    let kf = k as f64;
    let cap = |s: f64| {
        let r = modulus.rho(s);
        scale * 2.0 / (kf * r * r)
    };
    let up = |s: f64| cap(s) * (s - lo) / ramp;
    let down = |s: f64| cap(s) * (hi - s) / ramp;
    let (k1, k2) = (lo + ramp, hi - ramp);
    let mass = if k1 >= k2 {
        let mid = 0.5 * (lo + hi);
        quad::adaptive_simpson(&up, lo, mid, tol)? + quad::adaptive_simpson(&down, mid, hi, tol)?
    } else {
        quad::adaptive_simpson(&up, lo, k1, tol)?
            + quad::adaptive_simpson(&cap, k1, k2, tol)?
            + quad::adaptive_simpson(&down, k2, hi, tol)?
    };
    Ok(mass)
}

/// Builds the cached grid: geometric nodes plus the ramp kinks, cumulative
/// `Psi` via per-panel Simpson and cumulative `Phi` via Simpson on `Psi`.
fn tabulate_bump(modulus: &Modulus, k: usize, lo: f64, hi: f64, ramp: f64, scale: f64) -> Bump {
    let ratio = hi / lo;
    let mut nodes: Vec<f64> = (0..=GRID_PANELS)
        .map(|i| lo * ratio.powf(i as f64 / GRID_PANELS as f64))
        .collect();
    *nodes.last_mut().unwrap() = hi;
    for kink in [lo + ramp, hi - ramp] {
        if kink > lo && kink < hi {
            let pos = nodes.partition_point(|&v| v < kink);
            if nodes[pos] != kink {
                nodes.insert(pos, kink);
            }
        }
    }
    let bump = Bump {
        k,
        lo,
        hi,
        ramp,
        scale,
        mass: 0.0,
        nodes: nodes.clone(),
        psi_cum: Vec::new(),
        phi_cum: Vec::new(),
    };
    let psi = |s: f64| bump.psi_at(modulus, s);
    let n = nodes.len();
    let mut psi_cum = vec![0.0; n];
    let mut phi_cum = vec![0.0; n];
    for i in 1..n {
        let (a, b) = (nodes[i - 1], nodes[i]);
        let h = b - a;
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (psi(a), psi(m), psi(b));
        let panel = (fa + 4.0 * fm + fb) * h / 6.0;
        psi_cum[i] = psi_cum[i - 1] + panel;
        // Psi at the panel midpoint, then Simpson again for the outer integral
        let m1 = 0.5 * (a + m);
        let half = (fa + 4.0 * psi(m1) + fm) * (m - a) / 6.0;
        let psi_mid = psi_cum[i - 1] + half;
        phi_cum[i] = phi_cum[i - 1] + (psi_cum[i - 1] + 4.0 * psi_mid + psi_cum[i]) * h / 6.0;
    }
    Bump { psi_cum, phi_cum, ..bump }
}

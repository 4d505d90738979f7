//! One-dimensional scale-function machinery: scale densities and
//! divergence-based boundary classification.
//!
//! For a diffusion `dZ = drift(Z) dt + sqrt(diff_sq(Z)) dW` on an open
//! interval, the scale density is
//!
//! ```text
//! rho(y) = exp( -2 int_{y0}^{y} drift(u) / diff_sq(u) du )
//! ```
//!
//! An endpoint where the integral of `rho` diverges cannot be reached by the
//! process. Divergence is detected empirically: partial integrals are taken
//! up to distances `10^-2, 10^-3, ..., 10^-7` of the endpoint, and the
//! endpoint is declared unattainable when the per-decade increments do not
//! decay (power-law densities with exponent at least 1 keep their increments
//! from shrinking, while integrable tails lose a factor of about
//! `10^(1-q)` per decade). An `attainable` verdict additionally requires the
//! fitted power-law exponent to be safely below 1, since a finite mesh can
//! never distinguish slow divergence from slow convergence on its own;
//! conflicting signals yield `inconclusive`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::quad::{self, QuadError};

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error("invalid diffusion: {reason}")]
    InvalidDiffusion { reason: String },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A one-dimensional diffusion given by drift and squared diffusion on an
/// open interval, with a reference point `y0` for the scale integral.
#[derive(Clone)]
pub struct Diffusion1D {
    drift: Fn1,
    diff_sq: Fn1,
    interval: (f64, f64),
    y0: f64,
}

impl fmt::Debug for Diffusion1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Diffusion1D")
            .field("interval", &self.interval)
            .field("y0", &self.y0)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Unattainable,
    Attainable,
    Inconclusive,
}

/// Verdict for one endpoint, with the divergence evidence that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryVerdict {
    pub endpoint: EndpointSide,
    pub classification: Classification,
    /// Partial scale integral at the closest mesh refinement; when
    /// `diverged` is set this is a running lower bound, not an estimate.
    pub scale_integral_estimate: f64,
    pub diverged: bool,
    /// Fitted local power-law exponent of the density near the endpoint,
    /// when the log-log slopes stabilized.
    pub exponent_estimate: Option<f64>,
    /// `(distance to endpoint, partial integral)` over the geometric meshes.
    pub evidence: Vec<(f64, f64)>,
}

impl Diffusion1D {
    /// Builds a diffusion, auditing `diff_sq > 0` on a sampled interior grid.
    pub fn new(
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        diff_sq: impl Fn(f64) -> f64 + Send + Sync + 'static,
        interval: (f64, f64),
    ) -> Result<Diffusion1D, BoundaryError> {
        let (l, r) = interval;
        if l >= r || !l.is_finite() || !r.is_finite() {
            return Err(BoundaryError::InvalidDiffusion {
                reason: format!("interval ({l}, {r}) is not a finite open interval"),
            });
        }
        let d = Diffusion1D {
            drift: Arc::new(drift),
            diff_sq: Arc::new(diff_sq),
            interval,
            y0: 0.5 * (l + r),
        };
        for i in 1..128 {
            let y = l + (r - l) * i as f64 / 128.0;
            let v = (d.diff_sq)(y);
            if v <= 0.0 || !v.is_finite() {
                return Err(BoundaryError::InvalidDiffusion {
                    reason: format!("diff_sq({y}) = {v} is not positive"),
                });
            }
        }
        Ok(d)
    }

    /// Moves the scale-integral reference point (defaults to the midpoint).
    pub fn with_reference(mut self, y0: f64) -> Result<Diffusion1D, BoundaryError> {
        if !(self.interval.0 < y0 && y0 < self.interval.1) {
            return Err(BoundaryError::InvalidDiffusion {
                reason: format!("reference {y0} outside ({}, {})", self.interval.0, self.interval.1),
            });
        }
        self.y0 = y0;
        Ok(self)
    }

    /// The dominating radial diffusion of the unit-ball model on (0, 1):
    /// drift `2 [n - (n + kappa) u]`, squared diffusion `8 u (1 - u)`.
    pub fn ball_dominating(n: usize, kappa: f64) -> Diffusion1D {
        let nf = n as f64;
        Diffusion1D {
            drift: Arc::new(move |u: f64| 2.0 * (nf - (nf + kappa) * u)),
            diff_sq: Arc::new(|u: f64| 8.0 * u * (1.0 - u)),
            interval: (0.0, 1.0),
            y0: 0.5,
        }
    }

    /// The one-dimensional square-root model `dX = c dt + 2 sqrt(X) dW` on
    /// (0, 2) with reference 1.
    pub fn bessel(c: f64) -> Diffusion1D {
        Diffusion1D {
            drift: Arc::new(move |_u: f64| c),
            diff_sq: Arc::new(|u: f64| 4.0 * u),
            interval: (0.0, 2.0),
            y0: 1.0,
        }
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn reference(&self) -> f64 {
        self.y0
    }

    fn log_density_increment(&self, a: f64, b: f64) -> Result<f64, BoundaryError> {
        if a == b {
            return Ok(0.0);
        }
        let drift = Arc::clone(&self.drift);
        let diff_sq = Arc::clone(&self.diff_sq);
        let f = move |u: f64| drift(u) / diff_sq(u);
        let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
        let rough = quad::adaptive_simpson(&f, lo, hi, 1e-6)?;
        let tol = (1e-12 * rough.abs()).max(1e-12);
        Ok(-2.0 * sign * quad::adaptive_simpson(&f, lo, hi, tol)?)
    }

    /// `exp(-2 int_{y0}^{y} drift/diff_sq du)`; equals 1 exactly at `y0`.
    pub fn scale_density(&self, y: f64) -> Result<f64, BoundaryError> {
        if !(self.interval.0 < y && y < self.interval.1) {
            return Err(BoundaryError::InvalidDiffusion {
                reason: format!("{y} outside the open interval"),
            });
        }
        Ok(self.log_density_increment(self.y0, y)?.exp())
    }

    /// Classifies one endpoint by integrating the scale density toward it
    /// over geometric meshes. Never errors: failures become `inconclusive`.
    pub fn classify(&self, endpoint: EndpointSide) -> BoundaryVerdict {
        match self.classify_inner(endpoint) {
            Ok(v) => v,
            Err(_) => BoundaryVerdict {
                endpoint,
                classification: Classification::Inconclusive,
                scale_integral_estimate: f64::NAN,
                diverged: false,
                exponent_estimate: None,
                evidence: Vec::new(),
            },
        }
    }

    fn classify_inner(&self, endpoint: EndpointSide) -> Result<BoundaryVerdict, BoundaryError> {
        let (l, r) = self.interval;
        let target = match endpoint {
            EndpointSide::Lower => l,
            EndpointSide::Upper => r,
        };
        let full_dist = (self.y0 - target).abs();
        let marks: Vec<f64> = (0..6).map(|j| 10f64.powi(-2 - j)).collect();
        if full_dist <= marks[0] * 2.0 {
            return Err(BoundaryError::InvalidDiffusion {
                reason: "reference point too close to the endpoint".into(),
            });
        }
        // geometric march from the reference toward the endpoint, with the
        // mark distances inserted exactly
        let d_end = *marks.last().unwrap();
        let per_decade = 48.0;
        let decades = (full_dist / d_end).log10();
        let m_panels = (per_decade * decades).ceil() as usize;
        let mut dists: Vec<f64> = (0..=m_panels)
            .map(|i| full_dist * (d_end / full_dist).powf(i as f64 / m_panels as f64))
            .collect();
        for &mk in &marks {
            let pos = dists.partition_point(|&v| v > mk);
            if pos >= dists.len() || dists[pos] != mk {
                dists.insert(pos, mk);
            }
        }
        let y_at = |dist: f64| match endpoint {
            EndpointSide::Lower => target + dist,
            EndpointSide::Upper => target - dist,
        };

        // march: cumulative log-density and cumulative outer integral
        let mut log_rho = self.log_density_increment(self.y0, y_at(dists[0]))?;
        let mut integral = 0.0f64;
        let mut evidence: Vec<(f64, f64)> = Vec::with_capacity(marks.len());
        let mut log_rho_at_marks: Vec<f64> = Vec::with_capacity(marks.len());
        let mut next_mark = 0usize;
        if dists[0] == marks[0] {
            evidence.push((marks[0], integral));
            log_rho_at_marks.push(log_rho);
            next_mark = 1;
        }
        for w in dists.windows(2) {
            let (ya, yb) = (y_at(w[0]), y_at(w[1]));
            let ym = 0.5 * (ya + yb);
            let log_mid = log_rho + self.log_density_increment(ya, ym)?;
            let log_b = log_mid + self.log_density_increment(ym, yb)?;
            let h = (yb - ya).abs();
            integral += (log_rho.exp() + 4.0 * log_mid.exp() + log_b.exp()) * h / 6.0;
            log_rho = log_b;
            if next_mark < marks.len() && w[1] == marks[next_mark] {
                evidence.push((marks[next_mark], integral));
                log_rho_at_marks.push(log_rho);
                next_mark += 1;
            }
        }

        // divergence rule: positive, non-decaying increments and real growth
        let mut increments = Vec::with_capacity(evidence.len().saturating_sub(1));
        for w in evidence.windows(2) {
            increments.push(w[1].1 - w[0].1);
        }
        let monotone = increments.iter().all(|&d| d > 0.0);
        let min_ratio = increments
            .windows(2)
            .map(|w| w[1] / w[0])
            .fold(f64::INFINITY, f64::min);
        let total_growth = evidence.last().unwrap().1 / evidence.first().unwrap().1.max(1e-300);
        let diverged = monotone && min_ratio >= 0.9 && total_growth >= 1.5;

        // local power-law exponent from the last stable log-log slopes
        let slopes: Vec<f64> = log_rho_at_marks
            .windows(2)
            .map(|w| (w[1] - w[0]) / std::f64::consts::LN_10)
            .collect();
        let exponent = match slopes.as_slice() {
            [.., a, b] if (a - b).abs() < 0.05 => Some(*b),
            _ => None,
        };

        let classification = match (diverged, exponent) {
            (true, Some(q)) if q > 0.98 => Classification::Unattainable,
            (true, None) => Classification::Unattainable,
            (false, Some(q)) if q < 0.98 => Classification::Attainable,
            _ => Classification::Inconclusive,
        };
        Ok(BoundaryVerdict {
            endpoint,
            classification,
            scale_integral_estimate: evidence.last().unwrap().1,
            diverged,
            exponent_estimate: exponent,
            evidence,
        })
    }
}

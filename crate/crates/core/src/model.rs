//! SDE model definitions: drift field, diffusion matrix field, state domain.
//!
//! A [`Model`] describes the autonomous system
//!
//! ```text
//! dX(t) = mu(X(t)) dt + sigma(X(t)) dW(t)
//! ```
//!
//! on one of three domains (full space, positive orthant, open unit ball).
//! Built-in constructors cover the square-root family (`multicir`,
//! `bessel1d`), the power family (`power_beta`) and the mean-reverting
//! unit-ball model (`unit_ball`); arbitrary coefficients can be supplied as
//! parsed expressions (`custom`).
//!
//! Models are immutable after construction and evaluation is pure, so a
//! `Model` can be shared freely across threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Expr, ExprError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: String, expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    FullSpace,
    PositiveOrthant,
    UnitBall,
}

/// Target level of the unit-ball drift `c (theta - x)`. The scalar form is
/// the default reading; a vector is accepted with `|theta|` taken as the
/// max-norm of its components.
#[derive(Debug, Clone, PartialEq)]
pub enum Theta {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Theta {
    pub fn magnitude(&self) -> f64 {
        match self {
            Theta::Scalar(t) => t.abs(),
            Theta::Vector(v) => v.iter().fold(0.0, |acc, t| acc.max(t.abs())),
        }
    }

    fn component(&self, i: usize) -> f64 {
        match self {
            Theta::Scalar(t) => *t,
            Theta::Vector(v) => v[i],
        }
    }
}

/// Mean-reversion strength `kappa = c (1 - sqrt(n) |theta|)` of the
/// unit-ball model; `kappa >= 2` is the confinement condition.
pub fn unit_ball_kappa(c: f64, theta: &Theta, n: usize) -> f64 {
    c * (1.0 - (n as f64).sqrt() * theta.magnitude())
}

#[derive(Debug, Clone)]
enum VecField {
    Const(Vec<f64>),
    Exprs(Vec<Expr>),
}

impl VecField {
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        match self {
            VecField::Const(v) => out.copy_from_slice(v),
            VecField::Exprs(es) => {
                for (o, e) in out.iter_mut().zip(es) {
                    *o = e.evaluate(x)?;
                }
            }
        }
        Ok(())
    }

    fn from_exprs(es: Vec<Expr>) -> Self {
        if es.iter().all(Expr::is_constant) {
            let consts: Result<Vec<f64>, ExprError> = es.iter().map(|e| e.evaluate(&[])).collect();
            if let Ok(v) = consts {
                return VecField::Const(v);
            }
        }
        VecField::Exprs(es)
    }
}

#[derive(Debug, Clone)]
enum MatField {
    Identity,
    Const(Vec<f64>),
    Exprs(Vec<Expr>),
}

impl MatField {
    /// Writes the full n-by-n matrix, row major.
    fn eval_into(&self, n: usize, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        match self {
            MatField::Identity => {
                out.fill(0.0);
                for i in 0..n {
                    out[i * n + i] = 1.0;
                }
            }
            MatField::Const(v) => out.copy_from_slice(v),
            MatField::Exprs(es) => {
                for (o, e) in out.iter_mut().zip(es) {
                    *o = e.evaluate(x)?;
                }
            }
        }
        Ok(())
    }

    fn eval_row_into(&self, n: usize, i: usize, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        match self {
            MatField::Identity => {
                out.fill(0.0);
                out[i] = 1.0;
            }
            MatField::Const(v) => out.copy_from_slice(&v[i * n..(i + 1) * n]),
            MatField::Exprs(es) => {
                for (o, e) in out.iter_mut().zip(&es[i * n..(i + 1) * n]) {
                    *o = e.evaluate(x)?;
                }
            }
        }
        Ok(())
    }

    fn from_exprs(es: Vec<Expr>) -> Self {
        if es.iter().all(Expr::is_constant) {
            let consts: Result<Vec<f64>, ExprError> = es.iter().map(|e| e.evaluate(&[])).collect();
            if let Ok(v) = consts {
                return MatField::Const(v);
            }
        }
        MatField::Exprs(es)
    }
}

#[derive(Debug, Clone)]
enum ModelKind {
    /// Coefficients used exactly as given.
    Custom { mu: VecField, sigma: MatField },
    /// Row i of the diffusion is `sqrt(|x_i|)` times row i of `sigma_base`.
    MultiCir { mu: VecField, sigma_base: MatField },
    /// Row i of the diffusion is `|x_i|^beta` times row i of `sigma_base`.
    PowerBeta { beta: f64, mu: VecField, sigma_base: MatField },
    /// Drift `c (theta - x)`, diffusion `sqrt(2 (1 - |x|^2)) I`.
    UnitBall { c: f64, theta: Theta },
    /// One-dimensional `dX = c dt + 2 sqrt(|X|) dW`.
    Bessel { c: f64 },
}

#[derive(Debug, Clone)]
pub struct Model {
    name: String,
    n: usize,
    domain: Domain,
    kind: ModelKind,
}

impl Model {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// `kappa` for the unit-ball model, `None` otherwise.
    pub fn kappa(&self) -> Option<f64> {
        match &self.kind {
            ModelKind::UnitBall { c, theta } => Some(unit_ball_kappa(*c, theta, self.n)),
            _ => None,
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match &self.kind {
            ModelKind::PowerBeta { beta, .. } => Some(*beta),
            _ => None,
        }
    }

    pub fn multicir(n: usize, mu: Vec<Expr>, sigma_base: Option<Vec<Expr>>) -> Result<Model, ModelError> {
        let mu = check_vec(n, mu, "mu")?;
        let sigma_base = check_mat(n, sigma_base, "sigma_base")?;
        Ok(Model {
            name: "multicir".into(),
            n,
            domain: Domain::PositiveOrthant,
            kind: ModelKind::MultiCir { mu, sigma_base },
        })
    }

    pub fn power_beta(
        n: usize,
        beta: f64,
        mu: Vec<Expr>,
        sigma_base: Option<Vec<Expr>>,
    ) -> Result<Model, ModelError> {
        if !(0.5..=1.0).contains(&beta) {
            return Err(ModelError::InvalidParameter(format!(
                "beta must lie in [0.5, 1], got {beta}"
            )));
        }
        let mu = check_vec(n, mu, "mu")?;
        let sigma_base = check_mat(n, sigma_base, "sigma_base")?;
        Ok(Model {
            name: "power_beta".into(),
            n,
            domain: Domain::FullSpace,
            kind: ModelKind::PowerBeta { beta, mu, sigma_base },
        })
    }

    pub fn unit_ball(n: usize, c: f64, theta: Theta) -> Result<Model, ModelError> {
        if c <= 0.0 {
            return Err(ModelError::InvalidParameter(format!("c must be positive, got {c}")));
        }
        if let Theta::Vector(v) = &theta {
            if v.len() != n {
                return Err(ModelError::DimensionMismatch {
                    what: "theta".into(),
                    expected: n,
                    got: v.len(),
                });
            }
        }
        Ok(Model {
            name: "unit_ball".into(),
            n,
            domain: Domain::UnitBall,
            kind: ModelKind::UnitBall { c, theta },
        })
    }

    pub fn bessel1d(c: f64) -> Model {
        Model {
            name: "bessel1d".into(),
            n: 1,
            domain: Domain::PositiveOrthant,
            kind: ModelKind::Bessel { c },
        }
    }

    pub fn custom(n: usize, domain: Domain, mu: Vec<Expr>, sigma: Vec<Expr>) -> Result<Model, ModelError> {
        let mu = check_vec(n, mu, "mu")?;
        let sigma = check_mat(n, Some(sigma), "sigma")?;
        Ok(Model {
            name: "custom".into(),
            n,
            domain,
            kind: ModelKind::Custom { mu, sigma },
        })
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        debug_assert_eq!(x.len(), self.n);
        match &self.kind {
            ModelKind::Custom { mu, .. }
            | ModelKind::MultiCir { mu, .. }
            | ModelKind::PowerBeta { mu, .. } => mu.eval_into(x, out),
            ModelKind::UnitBall { c, theta } => {
                for i in 0..self.n {
                    out[i] = c * (theta.component(i) - x[i]);
                }
                Ok(())
            }
            ModelKind::Bessel { c } => {
                out[0] = *c;
                Ok(())
            }
        }
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut out = vec![0.0; self.n];
        self.drift_into(x, &mut out)?;
        Ok(out)
    }

    /// Writes `sigma(x)` as a row-major n-by-n matrix.
    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n * self.n);
        let n = self.n;
        match &self.kind {
            ModelKind::Custom { sigma, .. } => sigma.eval_into(n, x, out),
            ModelKind::MultiCir { sigma_base, .. } => {
                sigma_base.eval_into(n, x, out)?;
                for i in 0..n {
                    let scale = x[i].abs().sqrt();
                    for v in &mut out[i * n..(i + 1) * n] {
                        *v *= scale;
                    }
                }
                Ok(())
            }
            ModelKind::PowerBeta { beta, sigma_base, .. } => {
                sigma_base.eval_into(n, x, out)?;
                for i in 0..n {
                    let scale = x[i].abs().powf(*beta);
                    for v in &mut out[i * n..(i + 1) * n] {
                        *v *= scale;
                    }
                }
                Ok(())
            }
            ModelKind::UnitBall { .. } => {
                // clamp absorbs one-ulp overshoot of |x| past 1
                let g = (2.0 * (1.0 - norm_sq(x)).max(0.0)).sqrt();
                out.fill(0.0);
                for i in 0..n {
                    out[i * n + i] = g;
                }
                Ok(())
            }
            ModelKind::Bessel { .. } => {
                out[0] = 2.0 * x[0].abs().sqrt();
                Ok(())
            }
        }
    }

    /// Writes row `i` of `sigma(x)`.
    pub fn diffusion_row_into(&self, x: &[f64], i: usize, out: &mut [f64]) -> Result<(), ModelError> {
        let n = self.n;
        match &self.kind {
            ModelKind::Custom { sigma, .. } => sigma.eval_row_into(n, i, x, out),
            ModelKind::MultiCir { sigma_base, .. } => {
                sigma_base.eval_row_into(n, i, x, out)?;
                let scale = x[i].abs().sqrt();
                for v in out.iter_mut() {
                    *v *= scale;
                }
                Ok(())
            }
            ModelKind::PowerBeta { beta, sigma_base, .. } => {
                sigma_base.eval_row_into(n, i, x, out)?;
                let scale = x[i].abs().powf(*beta);
                for v in out.iter_mut() {
                    *v *= scale;
                }
                Ok(())
            }
            ModelKind::UnitBall { .. } => {
                let g = (2.0 * (1.0 - norm_sq(x)).max(0.0)).sqrt();
                out.fill(0.0);
                out[i] = g;
                Ok(())
            }
            ModelKind::Bessel { .. } => {
                out[0] = 2.0 * x[0].abs().sqrt();
                Ok(())
            }
        }
    }

    pub fn diffusion(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut out = vec![0.0; self.n * self.n];
        self.diffusion_into(x, &mut out)?;
        Ok(out)
    }

    /// The matrix `m(x) = sigma(x) sigma(x)^T`, row major. Symmetric positive
    /// semidefinite by construction.
    pub fn diffusion_matrix_m(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let n = self.n;
        let sigma = self.diffusion(x)?;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += sigma[i * n + k] * sigma[j * n + k];
                }
                m[i * n + j] = acc;
                m[j * n + i] = acc;
            }
        }
        Ok(m)
    }

    /// `m_ii(x)`, the squared norm of diffusion row `i`.
    pub fn m_ii(&self, x: &[f64], i: usize, row_buf: &mut [f64]) -> Result<f64, ModelError> {
        self.diffusion_row_into(x, i, row_buf)?;
        Ok(row_buf.iter().map(|v| v * v).sum())
    }

    /// Projects `x` onto the closure of the domain (identity on the full
    /// space). Used both by the full-truncation coefficient evaluation and by
    /// the projected scheme.
    pub fn project_into_closure(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        match self.domain {
            Domain::FullSpace => {}
            Domain::PositiveOrthant => {
                for v in out.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Domain::UnitBall => {
                let r = norm_sq(out).sqrt();
                if r > 1.0 {
                    for v in out.iter_mut() {
                        *v /= r;
                    }
                }
            }
        }
    }

    /// True when `x` lies in the open domain.
    pub fn is_interior(&self, x: &[f64]) -> bool {
        match self.domain {
            Domain::FullSpace => true,
            Domain::PositiveOrthant => x.iter().all(|v| *v > 0.0),
            Domain::UnitBall => norm_sq(x) < 1.0,
        }
    }
}

pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn check_vec(n: usize, es: Vec<Expr>, what: &str) -> Result<VecField, ModelError> {
    if es.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: what.into(),
            expected: n,
            got: es.len(),
        });
    }
    for e in &es {
        if e.max_var() > n {
            return Err(ModelError::DimensionMismatch {
                what: format!("{what} entry `{e}`"),
                expected: n,
                got: e.max_var(),
            });
        }
    }
    Ok(VecField::from_exprs(es))
}

fn check_mat(n: usize, es: Option<Vec<Expr>>, what: &str) -> Result<MatField, ModelError> {
    let Some(es) = es else {
        return Ok(MatField::Identity);
    };
    if es.len() != n * n {
        return Err(ModelError::DimensionMismatch {
            what: what.into(),
            expected: n * n,
            got: es.len(),
        });
    }
    for e in &es {
        if e.max_var() > n {
            return Err(ModelError::DimensionMismatch {
                what: format!("{what} entry `{e}`"),
                expected: n,
                got: e.max_var(),
            });
        }
    }
    Ok(MatField::from_exprs(es))
}

/// A model description as it appears in the run configuration. Entries for
/// `mu` / `sigma` / `sigma_base` are coefficient expressions over `x1..xn`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<CoeffVecSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<String>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_base: Option<CoeffMatSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_vec: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
}

/// Either a single expression applied to every coordinate or one per
/// coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoeffVecSpec {
    One(String),
    PerCoordinate(Vec<String>),
}

/// Either the keyword `"identity"` or an explicit matrix of expressions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoeffMatSpec {
    Keyword(String),
    Matrix(Vec<Vec<String>>),
}

impl ModelSpec {
    pub fn named(name: &str) -> ModelSpec {
        ModelSpec {
            name: name.into(),
            n: None,
            mu: None,
            sigma: None,
            sigma_base: None,
            c: None,
            theta: None,
            theta_vec: None,
            beta: None,
            domain: None,
        }
    }
}

fn parse_vec(spec: &CoeffVecSpec, n: usize) -> Result<Vec<Expr>, ModelError> {
    let sources: Vec<&str> = match spec {
        CoeffVecSpec::One(s) => vec![s.as_str(); n],
        CoeffVecSpec::PerCoordinate(v) => v.iter().map(String::as_str).collect(),
    };
    if sources.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "mu".into(),
            expected: n,
            got: sources.len(),
        });
    }
    sources
        .iter()
        .map(|s| expr::parse(s, n).map_err(ModelError::from))
        .collect()
}

fn parse_mat(rows: &[Vec<String>], n: usize, what: &str) -> Result<Vec<Expr>, ModelError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(ModelError::DimensionMismatch {
            what: what.into(),
            expected: n,
            got: rows.iter().map(Vec::len).sum(),
        });
    }
    let mut out = Vec::with_capacity(n * n);
    for row in rows {
        for s in row {
            out.push(expr::parse(s, n)?);
        }
    }
    Ok(out)
}

fn parse_mat_spec(spec: Option<&CoeffMatSpec>, n: usize, what: &str) -> Result<Option<Vec<Expr>>, ModelError> {
    match spec {
        None => Ok(None),
        Some(CoeffMatSpec::Keyword(k)) if k == "identity" => Ok(None),
        Some(CoeffMatSpec::Keyword(k)) => {
            Err(ModelError::InvalidParameter(format!("unknown {what} keyword `{k}`")))
        }
        Some(CoeffMatSpec::Matrix(rows)) => parse_mat(rows, n, what).map(Some),
    }
}

/// Builds a [`Model`] from its configuration description.
pub fn build_model(spec: &ModelSpec) -> Result<Model, ModelError> {
    let want = |v: Option<f64>, what: &str| {
        v.ok_or_else(|| ModelError::InvalidParameter(format!("{} requires `{what}`", spec.name)))
    };
    match spec.name.as_str() {
        "multicir" => {
            let n = spec.n.ok_or_else(|| ModelError::InvalidParameter("multicir requires `n`".into()))?;
            let mu = spec
                .mu
                .as_ref()
                .ok_or_else(|| ModelError::InvalidParameter("multicir requires `mu`".into()))?;
            Model::multicir(n, parse_vec(mu, n)?, parse_mat_spec(spec.sigma_base.as_ref(), n, "sigma_base")?)
        }
        "power_beta" => {
            let n = spec.n.ok_or_else(|| ModelError::InvalidParameter("power_beta requires `n`".into()))?;
            let beta = want(spec.beta, "beta")?;
            let mu = spec
                .mu
                .as_ref()
                .ok_or_else(|| ModelError::InvalidParameter("power_beta requires `mu`".into()))?;
            Model::power_beta(
                n,
                beta,
                parse_vec(mu, n)?,
                parse_mat_spec(spec.sigma_base.as_ref(), n, "sigma_base")?,
            )
        }
        "unit_ball" => {
            let n = spec.n.ok_or_else(|| ModelError::InvalidParameter("unit_ball requires `n`".into()))?;
            let c = want(spec.c, "c")?;
            let theta = match (&spec.theta_vec, spec.theta) {
                (Some(v), _) => Theta::Vector(v.clone()),
                (None, t) => Theta::Scalar(t.unwrap_or(0.0)),
            };
            Model::unit_ball(n, c, theta)
        }
        "bessel1d" => {
            let c = want(spec.c, "c")?;
            if let Some(n) = spec.n {
                if n != 1 {
                    return Err(ModelError::DimensionMismatch {
                        what: "bessel1d".into(),
                        expected: 1,
                        got: n,
                    });
                }
            }
            Ok(Model::bessel1d(c))
        }
        "custom" => {
            let n = spec.n.ok_or_else(|| ModelError::InvalidParameter("custom requires `n`".into()))?;
            let mu = spec
                .mu
                .as_ref()
                .ok_or_else(|| ModelError::InvalidParameter("custom requires `mu`".into()))?;
            let sigma = spec
                .sigma
                .as_ref()
                .ok_or_else(|| ModelError::InvalidParameter("custom requires `sigma`".into()))?;
            Model::custom(
                n,
                spec.domain.unwrap_or(Domain::FullSpace),
                parse_vec(mu, n)?,
                parse_mat(sigma, n, "sigma")?,
            )
        }
        other => Err(ModelError::UnknownModel(other.into())),
    }
}

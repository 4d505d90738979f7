//! Run configuration: one TOML file with a `[model]` section plus one
//! section per subcommand. Unknown keys anywhere are hard errors.

use serde::{Deserialize, Serialize};

use orthant_core::model::ModelSpec;
use orthant_core::paths::{BoundaryPolicy, Scheme};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// 0 means the library default.
    #[serde(default)]
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<McConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classify: Option<ClassifyConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modulus: Option<ModulusConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniqueness: Option<UniquenessConfig>,
}

fn default_scheme() -> Scheme {
    Scheme::FullTruncation
}

fn default_policy() -> BoundaryPolicy {
    BoundaryPolicy::Continue
}

fn default_eps_hit() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub x0: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_policy")]
    pub boundary_policy: BoundaryPolicy,
    #[serde(default = "default_eps_hit")]
    pub eps_hit: f64,
    /// Path substream index within the master seed.
    #[serde(default)]
    pub path_index: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub x0: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    pub paths: usize,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default)]
    pub checkpoints: Vec<f64>,
    #[serde(default = "default_eps_hit")]
    pub eps_hit: f64,
}

fn default_pairs() -> usize {
    1024
}

fn default_box_bound() -> f64 {
    10.0
}

fn default_delta() -> f64 {
    0.1
}

fn default_band_samples() -> usize {
    512
}

fn default_slice_samples() -> usize {
    64
}

fn default_r_points() -> usize {
    64
}

fn default_growth_radii() -> Vec<f64> {
    vec![2.0, 4.0, 8.0]
}

fn default_growth_samples() -> usize {
    32
}

/// Which audits to run; defaults to everything applicable to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    DiffusionModulus,
    BoundaryDrift,
    LinearGrowth,
    UnitBall,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<CheckKind>>,
    /// Modulus name for the diffusion-continuity audit: `sqrt`, `linear`, or `power:<p>`.
    #[serde(default = "default_rho")]
    pub rho: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_box_bound")]
    pub box_bound: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_band_samples")]
    pub band_samples: usize,
    #[serde(default = "default_slice_samples")]
    pub samples_per_slice: usize,
    #[serde(default = "default_r_points")]
    pub r_points: usize,
    /// One-variable expression in `x1`; enables the variance-cap audit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_tilde: Option<String>,
    #[serde(default = "default_growth_radii")]
    pub growth_radii: Vec<f64>,
    #[serde(default = "default_growth_samples")]
    pub growth_samples: usize,
}

fn default_rho() -> String {
    "sqrt".into()
}

fn default_c_tol() -> f64 {
    5.0
}

fn default_envelope_points() -> usize {
    2048
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// `"x<i>"` for the i-th coordinate (1-based) or `"radial"`.
    pub coord: String,
    pub x0: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_c_tol")]
    pub c_tol: f64,
    #[serde(default = "default_eps_hit")]
    pub eps_hit: f64,
    #[serde(default = "default_envelope_points")]
    pub envelope_points: usize,
    #[serde(default = "default_slice_samples")]
    pub envelope_samples: usize,
    #[serde(default = "default_box_bound")]
    pub box_bound: f64,
    /// Also write `coupling.csv` with `(t, p, z)` rows.
    #[serde(default)]
    pub csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointChoice {
    Lower,
    Upper,
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    /// `ball_dominating`, `bessel`, or `custom`.
    pub diffusion: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Custom diffusions: expressions in `x1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diff_sq: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
    #[serde(default = "default_endpoint")]
    pub endpoint: EndpointChoice,
}

fn default_endpoint() -> EndpointChoice {
    EndpointChoice::Both
}

fn default_k_max() -> usize {
    8
}

fn default_grid_max() -> f64 {
    3.0
}

fn default_grid_points() -> usize {
    512
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulusConfig {
    #[serde(default = "default_rho")]
    pub rho: String,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_grid_max")]
    pub grid_max: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_refinements() -> usize {
    3
}

fn default_gap_paths() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniquenessConfig {
    pub x0: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    #[serde(default = "default_scheme")]
    pub scheme_a: Scheme,
    #[serde(default = "default_scheme")]
    pub scheme_b: Scheme,
    #[serde(default = "default_refinements")]
    pub refinements: usize,
    #[serde(default = "default_gap_paths")]
    pub paths: usize,
}

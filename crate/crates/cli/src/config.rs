//! JSON configuration schemas and their conversion into core objects.
//!
//! Every document is schema-validated before any computation: unknown
//! keys are rejected by serde, and cross-field constraints are checked in
//! the `build` methods with messages naming the offending key.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use invlearn_core::experiments::{LambdaRule, NoiseModel, RateStudyConfig, SourceSpec};
use invlearn_core::hilbert::{Grid, NormMode, RkhsBasis, Space};
use invlearn_core::kernels::Kernel;
use invlearn_core::operators::{ForwardOp, Theta};
use invlearn_core::tikhonov::{GnOptions, IndexFamily, IndexFunction};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: String,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
    pub domain: [f64; 2],
}

fn param_f64(params: &serde_json::Map<String, serde_json::Value>, key: &str) -> Result<f64> {
    params
        .get(key)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| CliError::config(format!("kernel.params.{key} missing or not a number")))
}

impl KernelConfig {
    pub fn build(&self) -> Result<Kernel> {
        let [a, b] = self.domain;
        let allowed: &[&str] = match self.family.as_str() {
            "gaussian" => &["lengthscale"],
            "sobolev1d" => &["order"],
            "matern" => &["smoothness", "lengthscale"],
            other => {
                return Err(CliError::config(format!(
                    "kernel.family \"{other}\" is not one of gaussian | sobolev1d | matern"
                )))
            }
        };
        for key in self.params.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::config(format!(
                    "kernel.params.{key} is not a parameter of the {} family",
                    self.family
                )));
            }
        }
        let kernel = match self.family.as_str() {
            "gaussian" => Kernel::gaussian(param_f64(&self.params, "lengthscale")?, a, b),
            "sobolev1d" => {
                let order = param_f64(&self.params, "order")?;
                if order.fract() != 0.0 || order < 1.0 {
                    return Err(CliError::config(
                        "kernel.params.order must be a positive integer",
                    ));
                }
                Kernel::sobolev1d(order as u32, a, b)
            }
            "matern" => Kernel::matern(
                param_f64(&self.params, "smoothness")?,
                param_f64(&self.params, "lengthscale")?,
                a,
                b,
            ),
            _ => unreachable!(),
        };
        kernel.map_err(CliError::from)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub a: f64,
    pub b: f64,
    pub n: usize,
    #[serde(default = "default_rule")]
    pub rule: String,
    #[serde(default)]
    pub normalize: bool,
}

fn default_rule() -> String {
    "trapezoid".to_string()
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        if self.rule != "trapezoid" {
            return Err(CliError::config(format!(
                "grid.rule \"{}\" is not supported (only \"trapezoid\")",
                self.rule
            )));
        }
        Grid::trapezoid(self.a, self.b, self.n, self.normalize).map_err(CliError::from)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaConfig {
    #[serde(rename = "type")]
    pub kind: String,
    pub amplitude: Option<f64>,
    pub tau: Option<f64>,
    pub path: Option<String>,
}

impl ThetaConfig {
    pub fn build(&self, grid: &Grid, config_dir: &Path) -> Result<Theta> {
        match self.kind.as_str() {
            "gaussian" => {
                let amplitude = self
                    .amplitude
                    .ok_or_else(|| CliError::config("theta.amplitude required for gaussian"))?;
                let tau = self
                    .tau
                    .ok_or_else(|| CliError::config("theta.tau required for gaussian"))?;
                if !(tau > 0.0) {
                    return Err(CliError::config("theta.tau must be positive"));
                }
                Ok(Theta::gaussian(amplitude, tau))
            }
            "pointwise" => {
                let amplitude = self
                    .amplitude
                    .ok_or_else(|| CliError::config("theta.amplitude required for pointwise"))?;
                Ok(Theta::pointwise(amplitude, grid.weights()))
            }
            "csv" => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| CliError::config("theta.path required for csv"))?;
                let m = crate::io::read_theta_matrix(&config_dir.join(path), grid.len())?;
                Ok(Theta::Matrix(m))
            }
            other => Err(CliError::config(format!(
                "theta.type \"{other}\" is not one of gaussian | pointwise | csv"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub kind: String,
    pub theta: Option<ThetaConfig>,
}

impl OperatorConfig {
    pub fn build(&self, grid: &Grid, config_dir: &Path) -> Result<ForwardOp> {
        match self.kind.as_str() {
            "identity" => {
                if self.theta.is_some() {
                    return Err(CliError::config("operator.theta is meaningless for identity"));
                }
                Ok(ForwardOp::identity())
            }
            "linear_integral" | "quadratic_integral" => {
                let theta = self
                    .theta
                    .as_ref()
                    .ok_or_else(|| CliError::config("operator.theta required"))?
                    .build(grid, config_dir)?;
                Ok(if self.kind == "linear_integral" {
                    ForwardOp::linear_integral(theta)
                } else {
                    ForwardOp::quadratic_integral(theta)
                })
            }
            other => Err(CliError::config(format!(
                "operator.kind \"{other}\" is not one of identity | linear_integral | quadratic_integral"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub model: String,
    pub sigma: f64,
}

impl NoiseConfig {
    pub fn build(&self) -> Result<NoiseModel> {
        if !(self.sigma >= 0.0) {
            return Err(CliError::config("noise.sigma must be >= 0"));
        }
        match self.model.as_str() {
            "gaussian" => Ok(NoiseModel::Gaussian { sigma: self.sigma }),
            "truncated_gaussian" => Ok(NoiseModel::TruncatedGaussian { sigma: self.sigma }),
            other => Err(CliError::config(format!(
                "noise.model \"{other}\" is not one of gaussian | truncated_gaussian"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiConfig {
    pub family: String,
    pub r: Option<f64>,
    pub p: Option<u32>,
    pub nu: Option<f64>,
    #[serde(default = "default_domain_cap")]
    pub domain_cap: f64,
}

fn default_domain_cap() -> f64 {
    1.0
}

impl PhiConfig {
    pub fn build(&self) -> Result<IndexFunction> {
        let family = match self.family.as_str() {
            "holder" => IndexFamily::Holder {
                r: self
                    .r
                    .ok_or_else(|| CliError::config("phi.r required for holder"))?,
            },
            "log_type" => IndexFamily::LogType {
                p: self
                    .p
                    .ok_or_else(|| CliError::config("phi.p required for log_type"))?,
                nu: self
                    .nu
                    .ok_or_else(|| CliError::config("phi.nu required for log_type"))?,
            },
            other => {
                return Err(CliError::config(format!(
                    "phi.family \"{other}\" is not one of holder | log_type"
                )))
            }
        };
        IndexFunction::new(family, self.domain_cap).map_err(CliError::from)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub phi: PhiConfig,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub g_norm: f64,
    #[serde(default)]
    pub g_seed: u64,
    #[serde(default = "default_g_modes")]
    pub g_modes: usize,
    #[serde(default = "default_fp_tol")]
    pub fixedpoint_tol: f64,
    #[serde(default = "default_fp_iters")]
    pub fixedpoint_iters: usize,
}

fn default_g_modes() -> usize {
    24
}
fn default_fp_tol() -> f64 {
    1e-10
}
fn default_fp_iters() -> usize {
    60
}

impl SourceConfig {
    pub fn build(&self) -> Result<SourceSpec> {
        let mut spec = SourceSpec::new(self.phi.build()?, self.big_r, self.g_norm, self.g_seed)?;
        spec.g_modes = self.g_modes;
        spec.fixedpoint_tol = self.fixedpoint_tol;
        spec.fixedpoint_iters = self.fixedpoint_iters;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnConfig {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default)]
    pub multi_start: usize,
    #[serde(default)]
    pub multi_start_seed: u64,
}

fn default_max_iters() -> usize {
    100
}
fn default_step_tol() -> f64 {
    1e-9
}
fn default_damping() -> f64 {
    1e-3
}

impl Default for GnConfig {
    fn default() -> Self {
        GnConfig {
            max_iters: default_max_iters(),
            step_tol: default_step_tol(),
            damping: default_damping(),
            multi_start: 0,
            multi_start_seed: 0,
        }
    }
}

impl GnConfig {
    pub fn build(&self) -> Result<GnOptions> {
        if !(self.step_tol > 0.0) || !(self.damping >= 0.0) || self.max_iters == 0 {
            return Err(CliError::config(
                "gn.step_tol must be > 0, gn.damping >= 0, gn.max_iters >= 1",
            ));
        }
        Ok(GnOptions {
            max_iters: self.max_iters,
            step_tol: self.step_tol,
            damping: self.damping,
            multi_start: self.multi_start,
            multi_start_seed: self.multi_start_seed,
            ..GnOptions::default()
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbarConfig {
    pub constant: f64,
}

impl FbarConfig {
    pub fn build(&self, n: usize) -> DVector<f64> {
        DVector::from_element(n, self.constant)
    }
}

/// Common problem block: kernel, grid, H1 norm, operator, base point.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kernel: KernelConfig,
    pub grid: GridConfig,
    #[serde(default = "default_h1_norm")]
    pub h1_norm: String,
    pub operator: OperatorConfig,
    pub fbar: FbarConfig,
}

fn default_h1_norm() -> String {
    "weighted_l2".to_string()
}

pub struct Problem {
    pub space: Space,
    pub op: ForwardOp,
    pub fbar: DVector<f64>,
}

impl ProblemConfig {
    pub fn build(&self, config_dir: &Path) -> Result<Problem> {
        let kernel = self.kernel.build()?;
        let grid = self.grid.build()?;
        let mode = match self.h1_norm.as_str() {
            "weighted_l2" => NormMode::WeightedL2,
            "rkhs" => NormMode::Rkhs,
            other => {
                return Err(CliError::config(format!(
                    "h1_norm \"{other}\" is not one of weighted_l2 | rkhs"
                )))
            }
        };
        let op = self.operator.build(&grid, config_dir)?;
        let basis: Arc<RkhsBasis> = RkhsBasis::new(kernel, grid)?;
        let space = Space::new(basis, mode);
        let fbar = self.fbar.build(space.len());
        Ok(Problem { space, op, fbar })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub source: Option<SourceConfig>,
    pub constant: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub m: usize,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub seed: u64,
    pub truth: TruthConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub csv: Option<String>,
    pub simulate: Option<SimulateConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveFileConfig {
    #[serde(flatten)]
    pub problem: ProblemConfig,
    pub lambda: f64,
    pub data: DataConfig,
    #[serde(default)]
    pub gn: GnConfig,
    #[serde(default = "default_fit_csv")]
    pub out_csv: String,
}

fn default_fit_csv() -> String {
    "fit.csv".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateStudyFileConfig {
    #[serde(flatten)]
    pub problem: ProblemConfig,
    pub ms: Vec<usize>,
    pub replicates: usize,
    pub noise: NoiseConfig,
    pub phi: PhiConfig,
    /// Eigenvalue-decay exponent; when absent it is estimated from the
    /// kernel spectrum on the grid.
    pub b: Option<f64>,
    pub source: SourceConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lambda_rule")]
    pub lambda_rule: String,
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default = "default_one")]
    pub lambda_scale: f64,
    #[serde(default = "default_condition_eta")]
    pub condition_eta: f64,
    #[serde(default)]
    pub gn: GnConfig,
    pub positivity_floor: Option<f64>,
    /// Record wall-clock seconds per cell. Off by default so outputs are
    /// byte-identical across runs.
    #[serde(default)]
    pub record_seconds: bool,
    #[serde(default = "default_slope_tolerance")]
    pub slope_tolerance: f64,
    #[serde(default = "default_rows_csv")]
    pub out_rows: String,
    #[serde(default = "default_summary_json")]
    pub out_summary: String,
}

fn default_lambda_rule() -> String {
    "psi".to_string()
}
fn default_one() -> f64 {
    1.0
}
fn default_condition_eta() -> f64 {
    0.1
}
fn default_slope_tolerance() -> f64 {
    0.15
}
fn default_rows_csv() -> String {
    "rows.csv".to_string()
}
fn default_summary_json() -> String {
    "summary.json".to_string()
}

impl RateStudyFileConfig {
    pub fn build_study_config(&self, b: f64, seed: u64) -> Result<RateStudyConfig> {
        let lambda_rule = match self.lambda_rule.as_str() {
            "psi" => LambdaRule::Psi,
            "theta" => LambdaRule::Theta,
            "fixed_grid" => LambdaRule::FixedGrid(self.lambda_grid.clone().ok_or_else(|| {
                CliError::config("lambda_grid required when lambda_rule = fixed_grid")
            })?),
            other => {
                return Err(CliError::config(format!(
                    "lambda_rule \"{other}\" is not one of psi | theta | fixed_grid"
                )))
            }
        };
        let cfg = RateStudyConfig {
            ms: self.ms.clone(),
            replicates: self.replicates,
            noise: self.noise.build()?,
            phi: self.phi.build()?,
            b,
            source: self.source.build()?,
            seed,
            lambda_rule,
            lambda_scale: self.lambda_scale,
            condition_eta: self.condition_eta,
            gn: self.gn.build()?,
            positivity_floor: self.positivity_floor,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaGridConfig {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl LambdaGridConfig {
    pub fn build(&self) -> Result<Vec<f64>> {
        if !(self.min > 0.0 && self.max > self.min) || self.count < 2 {
            return Err(CliError::config(
                "lambda_grid needs 0 < min < max and count >= 2",
            ));
        }
        let (lo, hi) = (self.min.ln(), self.max.ln());
        Ok((0..self.count)
            .map(|i| (lo + (hi - lo) * i as f64 / (self.count - 1) as f64).exp())
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffdimFileConfig {
    pub kernel: KernelConfig,
    pub grid: GridConfig,
    pub lambda_grid: LambdaGridConfig,
    #[serde(default = "default_effdim_csv")]
    pub out_csv: String,
}

fn default_effdim_csv() -> String {
    "effdim.csv".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundFileConfig {
    #[serde(flatten)]
    pub problem: ProblemConfig,
    pub phi: PhiConfig,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub epsilons: Vec<f64>,
    /// Number of leading eigenmodes over which the two-sided decay is
    /// certified.
    pub decay_modes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_family_json")]
    pub out_manifest: String,
    #[serde(default = "default_pairs_csv")]
    pub out_pairs: String,
}

fn default_family_json() -> String {
    "family.json".to_string()
}
fn default_pairs_csv() -> String {
    "pairs.csv".to_string()
}

/// Load a JSON config file, rejecting unknown keys.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde::Deserialize::deserialize(&mut de)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Matrix theta loader is in crate::io; re-exported for the config path.
pub use crate::io::read_theta_matrix;

/// Helper shared by effdim and the lower bound: spectrum of the grid
/// covariance operator.
pub fn covariance_spectrum(basis: &RkhsBasis) -> Result<Vec<f64>> {
    let cov = invlearn_core::hilbert::empirical_covariance(basis);
    let eig = invlearn_core::linalg::SymEig::new(&cov)?.clamped_nonneg();
    Ok(eig.values.iter().cloned().collect())
}

/// Dense matrix type re-export used by io.
pub type Matrix = DMatrix<f64>;

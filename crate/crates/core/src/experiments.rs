//! Data simulation under the sampling model, source-condition truth
//! construction by fixed-point iteration, Monte Carlo rate studies, and
//! empirical concentration-bound checks.

use alloc::string::String;
use alloc::vec::Vec;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::hilbert::{effective_dimension, RkhsBasis, Space};
use crate::linalg::{self, SymEig};
use crate::operators::ForwardOp;
use crate::tikhonov::{lambda_choice, rate_exponents, tikhonov_solve, GnOptions, IndexFunction};

/// SplitMix64 step; used to derive independent per-task seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seed for a `(study seed, sample size, replicate)` cell,
/// independent of scheduling order.
pub fn derive_seed(seed: u64, m: u64, replicate: u64) -> u64 {
    splitmix64(seed ^ splitmix64(m ^ splitmix64(replicate.wrapping_add(0xa5a5_a5a5))))
}

/// Observation noise model. Both models are centered; the truncated
/// variant hard-limits at three standard deviations by rejection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    Gaussian { sigma: f64 },
    TruncatedGaussian { sigma: f64 },
}

impl NoiseModel {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } | NoiseModel::TruncatedGaussian { sigma } => sigma,
        }
    }

    /// Bernstein certificate `(M, Sigma)`: for a centered noise with
    /// `E[exp(|eps|/M) - |eps|/M - 1] <= Sigma^2 / (2 M^2)`. Gaussians
    /// with `M = 3 sigma`, `Sigma = 2 sigma` satisfy this with room, and
    /// the 3-sigma truncation only shrinks the moments.
    pub fn bernstein_certificate(&self) -> (f64, f64) {
        let s = self.sigma();
        (3.0 * s, 2.0 * s)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
            NoiseModel::TruncatedGaussian { sigma } => loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 3.0 {
                    return sigma * z;
                }
            },
        }
    }
}

/// Noise metadata carried with a sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseMeta {
    pub model: NoiseModel,
    pub m_cert: f64,
    pub sigma_cert: f64,
}

/// A simulated (or loaded) data set `{(x_i, y_i)}` with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub seed: u64,
    pub noise: NoiseMeta,
}

impl SampleSet {
    pub fn new(x: Vec<f64>, y: Vec<f64>, seed: u64, noise: NoiseMeta) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::shape(alloc::format!(
                "sample set with {} design points and {} observations",
                x.len(),
                y.len()
            )));
        }
        Ok(SampleSet { x, y, seed, noise })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Draw `m` observations of `A(f_rho)` at uniform design points with
/// centered noise: `y_i = A(f_rho)(x_i) + eps_i`.
pub fn simulate(
    op: &ForwardOp,
    space: &Space,
    f_rho: &DVector<f64>,
    m: usize,
    noise: NoiseModel,
    seed: u64,
) -> Result<SampleSet> {
    if m == 0 {
        return Err(Error::invalid("simulate needs m >= 1"));
    }
    if !(noise.sigma() >= 0.0) {
        return Err(Error::invalid("noise sigma must be >= 0"));
    }
    let (a, b) = space.grid().domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(m);
    for _ in 0..m {
        x.push(a + (b - a) * rng.random::<f64>());
    }
    let clean = op.apply(space, f_rho, &x)?;
    let mut y = Vec::with_capacity(m);
    for i in 0..m {
        let eps = if noise.sigma() > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        y.push(clean[i] + eps);
    }
    let (m_cert, sigma_cert) = noise.bernstein_certificate();
    SampleSet::new(
        x,
        y,
        seed,
        NoiseMeta {
            model: noise,
            m_cert,
            sigma_cert,
        },
    )
}

/// Source-condition specification for truth construction.
#[derive(Debug, Clone)]
pub struct SourceSpec {
    pub phi: IndexFunction,
    /// Source-norm budget; the effective `||g||` never exceeds it.
    pub big_r: f64,
    pub g_seed: u64,
    /// Requested `||g||_{H1}` (halved automatically when the fixed-point
    /// iteration fails to contract).
    pub g_norm: f64,
    /// Number of leading eigenmodes of the linearization at `fbar` that
    /// carry `g` (0 = all numerically reliable modes). Restricting `g` to
    /// resolved modes keeps the fixed point clear of eigenvalue noise.
    pub g_modes: usize,
    pub fixedpoint_tol: f64,
    pub fixedpoint_iters: usize,
}

impl SourceSpec {
    pub fn new(phi: IndexFunction, big_r: f64, g_norm: f64, g_seed: u64) -> Result<Self> {
        if !(big_r > 0.0) || !(g_norm >= 0.0) || g_norm > big_r {
            return Err(Error::invalid("source spec needs 0 <= g_norm <= R"));
        }
        Ok(SourceSpec {
            phi,
            big_r,
            g_seed,
            g_norm,
            g_modes: 24,
            fixedpoint_tol: 1e-10,
            fixedpoint_iters: 60,
        })
    }
}

/// A constructed truth `f_rho = fbar + phi(T_{f_rho}) g` with its
/// certificate.
#[derive(Debug, Clone)]
pub struct SourceTruth {
    /// Node values of the constructed truth.
    pub f_rho: DVector<f64>,
    /// The source element in folded H1 coordinates.
    pub g_folded: DVector<f64>,
    /// `||g||` actually used (after any halvings).
    pub g_norm_used: f64,
    pub halvings: usize,
    pub iterations: usize,
    /// H1 norm of the final fixed-point update.
    pub residual: f64,
}

/// Random `g` supported on the leading eigenmodes of a folded operator.
pub fn random_source_element(
    t_folded: &SymEig,
    modes: usize,
    norm: f64,
    seed: u64,
) -> DVector<f64> {
    let n = t_folded.values.len();
    let reliable = t_folded
        .values
        .iter()
        .take_while(|&&t| {
            t > crate::linalg::SPECTRAL_CLIP * t_folded.values[0].max(f64::MIN_POSITIVE)
        })
        .count()
        .max(1);
    let k = if modes == 0 {
        reliable
    } else {
        modes.min(reliable)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeff = DVector::zeros(n);
    for j in 0..k {
        let z: f64 = StandardNormal.sample(&mut rng);
        coeff[j] = z;
    }
    let g = &t_folded.vectors * coeff;
    let nrm = g.norm();
    if nrm > 0.0 {
        g * (norm / nrm)
    } else {
        g
    }
}

/// Construct the truth `f_rho` solving the fixed-point equation
/// `f = fbar + phi(T_f) g`, where `T_f` is the folded population
/// covariance of the linearization at `f`.
///
/// The iteration starts at `fbar`; when it fails to contract, `||g||` is
/// halved (up to ten times) before giving up. For linear operators `T`
/// does not depend on `f` and the iteration settles immediately.
pub fn build_source_truth(
    op: &ForwardOp,
    space: &Space,
    fbar: &DVector<f64>,
    spec: &SourceSpec,
) -> Result<SourceTruth> {
    let tbar = op.population_t(space, fbar)?;
    let eig = SymEig::new(&tbar)?.clamped_nonneg();
    let g0 = random_source_element(&eig, spec.g_modes, spec.g_norm, spec.g_seed);
    let ubar = space.fold(fbar);
    let mut g = g0;
    for halving in 0..=10 {
        if let Some((f_rho, iterations, residual)) = fixed_point(op, space, fbar, &ubar, &g, spec) {
            return Ok(SourceTruth {
                f_rho,
                g_norm_used: g.norm(),
                g_folded: g,
                halvings: halving,
                iterations,
                residual,
            });
        }
        g /= 2.0;
    }
    Err(Error::ConstructionFailure(String::from(
        "source fixed point failed to contract after halving ||g|| ten times",
    )))
}

/// Same as [`build_source_truth`] but with an explicit folded source
/// element and no halving fallback: callers that prescribe `g` exactly
/// (the lower-bound family) must see the failure instead.
pub fn build_source_truth_with_g(
    op: &ForwardOp,
    space: &Space,
    fbar: &DVector<f64>,
    spec: &SourceSpec,
    g_folded: &DVector<f64>,
) -> Result<SourceTruth> {
    let ubar = space.fold(fbar);
    match fixed_point(op, space, fbar, &ubar, g_folded, spec) {
        Some((f_rho, iterations, residual)) => Ok(SourceTruth {
            f_rho,
            g_norm_used: g_folded.norm(),
            g_folded: g_folded.clone(),
            halvings: 0,
            iterations,
            residual,
        }),
        None => Err(Error::ConstructionFailure(String::from(
            "source fixed point failed to contract for the prescribed g",
        ))),
    }
}

fn fixed_point(
    op: &ForwardOp,
    space: &Space,
    fbar: &DVector<f64>,
    ubar: &DVector<f64>,
    g: &DVector<f64>,
    spec: &SourceSpec,
) -> Option<(DVector<f64>, usize, f64)> {
    let mut f = fbar.clone();
    let mut u = ubar.clone();
    let mut first_res = f64::INFINITY;
    for it in 0..spec.fixedpoint_iters {
        let t = op.population_t(space, &f).ok()?;
        let eig = SymEig::new(&t).ok()?.clamped_nonneg();
        let unew = ubar + eig.spectral_fn_apply(|s| spec.phi.eval(s), g);
        let res = (&unew - &u).norm();
        u = unew;
        f = space.unfold(&u);
        if it == 0 {
            first_res = res;
        }
        if res < spec.fixedpoint_tol {
            return Some((f, it + 1, res));
        }
        if res > 5.0 * first_res.max(1e-300) {
            return None; // diverging
        }
    }
    None
}

/// Rule selecting the regularization parameter per sample size.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaRule {
    /// `lambda = Theta^{-1}(m^{-1/2})`, `Theta(t) = t phi(t)`.
    Theta,
    /// `lambda = Psi^{-1}(m^{-1/2})`, `Psi(t) = t^{1/2 + 1/(2b)} phi(t)`.
    Psi,
    /// Explicit `lambda` per entry of `ms`.
    FixedGrid(Vec<f64>),
}

/// Monte Carlo rate-study configuration.
#[derive(Debug, Clone)]
pub struct RateStudyConfig {
    /// Increasing sample sizes (at least two).
    pub ms: Vec<usize>,
    /// Replicates per sample size (at least three).
    pub replicates: usize,
    pub noise: NoiseModel,
    /// Index function of the source condition (also drives the rule).
    pub phi: IndexFunction,
    /// Eigenvalue-decay exponent for the Psi rule and the theoretical
    /// exponents.
    pub b: f64,
    pub source: SourceSpec,
    pub seed: u64,
    pub lambda_rule: LambdaRule,
    /// Multiplier on the rule value (1 = the plain a-priori rule).
    pub lambda_scale: f64,
    /// Confidence level used when recording the sample-size condition.
    pub condition_eta: f64,
    pub gn: GnOptions,
    /// For quadratic operators: require the truth to stay above this floor
    /// (injectivity holds on the positive cone); `g` is halved on
    /// violation.
    pub positivity_floor: Option<f64>,
}

impl RateStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ms.len() < 2 {
            return Err(Error::invalid("rate study needs at least 2 sample sizes"));
        }
        if self.ms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("rate study sample sizes must increase"));
        }
        if self.replicates < 3 {
            return Err(Error::invalid("rate study needs at least 3 replicates"));
        }
        if let LambdaRule::FixedGrid(l) = &self.lambda_rule {
            if l.len() != self.ms.len() {
                return Err(Error::invalid(
                    "fixed lambda grid must match the sample sizes",
                ));
            }
            if l.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::invalid("fixed lambda grid must be positive"));
            }
        }
        if !(self.lambda_scale > 0.0) {
            return Err(Error::invalid("lambda_scale must be positive"));
        }
        if !(self.condition_eta > 0.0 && self.condition_eta < 1.0) {
            return Err(Error::invalid("condition_eta must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One `(m, replicate)` cell of a rate study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub m: usize,
    pub replicate: usize,
    pub lambda: f64,
    pub err_h1: f64,
    pub err_pred: f64,
    pub seconds: f64,
    pub converged: bool,
    pub gn_iters: usize,
    /// Whether the theorem's sample-size condition held for this cell.
    pub condition_held: bool,
}

/// Assembled rate study.
#[derive(Debug, Clone)]
pub struct RateStudyResult {
    pub rows: Vec<RateRow>,
    pub fitted_slope_h1: f64,
    pub fitted_slope_pred: f64,
    pub slope_stderr: f64,
    /// Exponent `-br/(2br+b+1)` implied by the configured `(r, b)` (Holder
    /// sources only).
    pub theoretical_h1: Option<f64>,
    /// Exponent `-b/(2b+1)` for the prediction error in the `r = 1/2` case.
    pub theoretical_pred: Option<f64>,
    /// Slopes refitted on the cells where the sample-size condition held;
    /// present only when those cells span at least four sample sizes.
    pub restricted_slope_h1: Option<f64>,
    pub restricted_slope_pred: Option<f64>,
    pub medians_h1: Vec<f64>,
    pub medians_pred: Vec<f64>,
    pub failed_cells: usize,
}

/// A prepared rate study: the constructed truth, the per-m lambdas, and
/// the constants entering the recorded sample-size condition.
#[derive(Debug, Clone)]
pub struct RateStudy {
    pub config: RateStudyConfig,
    pub truth: SourceTruth,
    pub lambdas: Vec<f64>,
    pub kappa: f64,
    pub lipschitz: f64,
    pub ball_radius: f64,
}

impl RateStudy {
    /// Build the truth and the lambda schedule.
    pub fn prepare(
        config: RateStudyConfig,
        op: &ForwardOp,
        space: &Space,
        fbar: &DVector<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let mut spec = config.source.clone();
        let mut truth = build_source_truth(op, space, fbar, &spec)?;
        if let Some(floor) = config.positivity_floor {
            for _ in 0..10 {
                if truth.f_rho.iter().all(|&v| v > floor) {
                    break;
                }
                spec.g_norm /= 2.0;
                truth = build_source_truth(op, space, fbar, &spec)?;
            }
            if !truth.f_rho.iter().all(|&v| v > floor) {
                return Err(Error::ConstructionFailure(
                    "truth violates the positivity floor even after shrinking g".into(),
                ));
            }
        }
        let mut lambdas = Vec::with_capacity(config.ms.len());
        for (i, &m) in config.ms.iter().enumerate() {
            let lam = match &config.lambda_rule {
                LambdaRule::Theta => lambda_choice(m, &config.phi, None)?.lambda,
                LambdaRule::Psi => lambda_choice(m, &config.phi, Some(config.b))?.lambda,
                LambdaRule::FixedGrid(l) => l[i],
            };
            lambdas.push(lam * config.lambda_scale);
        }
        let kappa = space.basis().kappa();
        let lipschitz = op.operator_norm(space, &truth.f_rho)?;
        let diff = &truth.f_rho - fbar;
        let ball_radius = 4.0 * space.h1_norm(&diff)?;
        Ok(RateStudy {
            config,
            truth,
            lambdas,
            kappa,
            lipschitz,
            ball_radius,
        })
    }

    /// Run one `(m index, replicate)` cell. Pure and deterministic in
    /// `(seed, m, replicate)`; `seconds` is left at zero for the caller
    /// to fill.
    pub fn cell(
        &self,
        op: &ForwardOp,
        space: &Space,
        fbar: &DVector<f64>,
        m_index: usize,
        replicate: usize,
    ) -> Result<RateRow> {
        let m = self.config.ms[m_index];
        let lambda = self.lambdas[m_index];
        let seed = derive_seed(self.config.seed, m as u64, replicate as u64);
        let data = simulate(op, space, &self.truth.f_rho, m, self.config.noise, seed)?;
        let fit = tikhonov_solve(op, space, &data, fbar, lambda, &self.config.gn)?;
        let diff = &fit.solution - &self.truth.f_rho;
        let err_h1 = space.h1_norm(&diff)?;
        let pred_diff =
            op.apply_nodes(space, &fit.solution)? - op.apply_nodes(space, &self.truth.f_rho)?;
        let err_pred = space.grid().l2_norm(&pred_diff);
        let (m_cert, sigma_cert) = self.config.noise.bernstein_certificate();
        let condition_held = neighborhood_condition_check(
            m,
            lambda,
            self.kappa,
            self.lipschitz,
            m_cert,
            sigma_cert,
            self.ball_radius.max(f64::MIN_POSITIVE),
            self.config.condition_eta,
        );
        Ok(RateRow {
            m,
            replicate,
            lambda,
            err_h1,
            err_pred,
            seconds: 0.0,
            converged: fit.converged,
            gn_iters: fit.gn_iters,
            condition_held,
        })
    }

    /// Fit slopes over the medians of the converged cells.
    pub fn assemble(&self, rows: Vec<RateRow>) -> Result<RateStudyResult> {
        let total = rows.len();
        let failed = rows.iter().filter(|r| !r.converged).count();
        if failed * 5 > total {
            return Err(Error::ConstructionFailure(alloc::format!(
                "{failed} of {total} rate-study cells failed to converge (over 20%)"
            )));
        }
        let (slope_h1, slope_pred, stderr, med_h1, med_pred) =
            fit_study_slopes(&self.config.ms, &rows, |_| true)?;
        let condition_ms: Vec<usize> = self
            .config
            .ms
            .iter()
            .copied()
            .filter(|&m| {
                rows.iter()
                    .any(|r| r.m == m && r.converged && r.condition_held)
            })
            .collect();
        let (restricted_h1, restricted_pred) = if condition_ms.len() >= 4 {
            let (s1, s2, _, _, _) = fit_study_slopes(&condition_ms, &rows, |r| r.condition_held)?;
            (Some(s1), Some(s2))
        } else {
            (None, None)
        };
        let (theoretical_h1, theoretical_pred) = match self.config.phi.holder_exponent() {
            Some(r) => {
                let e = rate_exponents(r, self.config.b);
                (Some(-e.h1_exponent), Some(-e.prediction_exponent))
            }
            None => (None, None),
        };
        Ok(RateStudyResult {
            rows,
            fitted_slope_h1: slope_h1,
            fitted_slope_pred: slope_pred,
            slope_stderr: stderr,
            theoretical_h1,
            theoretical_pred,
            restricted_slope_h1: restricted_h1,
            restricted_slope_pred: restricted_pred,
            medians_h1: med_h1,
            medians_pred: med_pred,
            failed_cells: failed,
        })
    }
}

/// `(slope_h1, slope_pred, stderr, medians_h1, medians_pred)`.
type SlopeFit = (f64, f64, f64, Vec<f64>, Vec<f64>);

fn fit_study_slopes(
    ms: &[usize],
    rows: &[RateRow],
    keep: impl Fn(&RateRow) -> bool,
) -> Result<SlopeFit> {
    let mut log_m = Vec::new();
    let mut log_h1 = Vec::new();
    let mut log_pred = Vec::new();
    let mut med_h1 = Vec::new();
    let mut med_pred = Vec::new();
    for &m in ms {
        let h1: Vec<f64> = rows
            .iter()
            .filter(|r| r.m == m && r.converged && keep(r))
            .map(|r| r.err_h1)
            .collect();
        let pred: Vec<f64> = rows
            .iter()
            .filter(|r| r.m == m && r.converged && keep(r))
            .map(|r| r.err_pred)
            .collect();
        if h1.is_empty() {
            return Err(Error::InsufficientData(alloc::format!(
                "no converged cells at m = {m}"
            )));
        }
        let mh = linalg::median(&h1)?;
        let mp = linalg::median(&pred)?;
        med_h1.push(mh);
        med_pred.push(mp);
        log_m.push((m as f64).ln());
        log_h1.push(mh.ln());
        log_pred.push(mp.ln());
    }
    let (_, slope_h1, _) = linalg::linear_fit(&log_m, &log_h1)?;
    let (_, slope_pred, _) = linalg::linear_fit(&log_m, &log_pred)?;
    let stderr = linalg::slope_stderr(&log_m, &log_h1)?;
    Ok((slope_h1, slope_pred, stderr, med_h1, med_pred))
}

/// Prepare and run a full rate study sequentially. `seconds` is reported
/// through the `clock` callback (seconds since an arbitrary origin); pass
/// `|| 0.0` when wall time is not wanted.
pub fn run_rate_study(
    config: RateStudyConfig,
    op: &ForwardOp,
    space: &Space,
    fbar: &DVector<f64>,
    mut clock: impl FnMut() -> f64,
) -> Result<RateStudyResult> {
    let study = RateStudy::prepare(config, op, space, fbar)?;
    let mut rows = Vec::new();
    for m_index in 0..study.config.ms.len() {
        for replicate in 0..study.config.replicates {
            let t0 = clock();
            let mut row = study.cell(op, space, fbar, m_index, replicate)?;
            row.seconds = clock() - t0;
            rows.push(row);
        }
    }
    study.assemble(rows)
}

/// Sample-size condition of the finite-sample theorem:
/// `8 kappa^2 max(1, L (M + Sigma) / (kappa d)) log(4/eta) <= sqrt(m) lambda`.
#[allow(clippy::too_many_arguments)]
pub fn neighborhood_condition_check(
    m: usize,
    lambda: f64,
    kappa: f64,
    lipschitz: f64,
    m_noise: f64,
    sigma_noise: f64,
    ball_radius: f64,
    eta: f64,
) -> bool {
    // eta is a confidence level in (0, 1) in the theory; values up to 4
    // keep the log positive and are accepted for arithmetic probing.
    if !(eta > 0.0 && eta < 4.0) || !(lambda > 0.0) {
        return false;
    }
    let lhs = 8.0
        * kappa
        * kappa
        * (1.0_f64).max(lipschitz * (m_noise + sigma_noise) / (kappa * ball_radius))
        * (4.0 / eta).ln();
    lhs <= (m as f64).sqrt() * lambda
}

/// Which sampled quantity a concentration check draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConcentrationQuantity {
    /// `(1/m) sum_i K_{x_i} eps_i` in the H2 norm.
    NoiseSection,
    /// `(1/m) sum_i (L_K + lambda)^{-1/2} K_{x_i} eps_i` in the H2 norm.
    WhitenedNoiseSection { lambda: f64 },
    /// `S_x^* S_x - L_K` in the Hilbert-Schmidt norm.
    CovarianceDeviation,
}

/// Empirical tail report of a concentration check against the
/// `2 (Q/m + S/sqrt(m)) log(2/eta)` bound.
#[derive(Debug, Clone)]
pub struct ConcentrationReport {
    pub quantity: ConcentrationQuantity,
    pub m: usize,
    pub trials: usize,
    pub eta_grid: Vec<f64>,
    /// Fraction of trials whose deviation exceeded the bound, per eta.
    pub empirical_tail_freq: Vec<f64>,
    pub bound_values: Vec<f64>,
    /// The certificate `(Q, S)` the bounds were computed from.
    pub q_cert: f64,
    pub s_cert: f64,
}

impl ConcentrationReport {
    /// Every empirical frequency is within binomial slack of its nominal
    /// level: `freq <= eta + 2 sqrt(eta (1 - eta) / trials)`.
    pub fn within_slack(&self) -> bool {
        self.eta_grid
            .iter()
            .zip(self.empirical_tail_freq.iter())
            .all(|(&eta, &freq)| {
                freq <= eta + 2.0 * (eta * (1.0 - eta) / self.trials as f64).sqrt()
            })
    }
}

/// Precomputed kernel-side quantities for the concentration statistics.
pub struct ConcentrationContext {
    basis: alloc::sync::Arc<RkhsBasis>,
    /// Eigendecomposition of the empirical covariance (prob weights).
    cov_eig: SymEig,
    /// `integral integral K(s,t)^2 drho(s) drho(t)` by double quadrature.
    cov_hs_sq: f64,
}

impl ConcentrationContext {
    pub fn new(basis: alloc::sync::Arc<RkhsBasis>) -> Result<Self> {
        // covariance wrt the probability measure
        let g = basis.gram();
        let p = basis.grid().prob_weights();
        let n = p.len();
        let mut cov = g.clone();
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] *= (p[i] * p[j]).sqrt();
            }
        }
        let cov_eig = SymEig::new(&cov)?.clamped_nonneg();
        let mut cov_hs_sq = 0.0;
        for i in 0..n {
            for j in 0..n {
                cov_hs_sq += p[i] * p[j] * g[(i, j)] * g[(i, j)];
            }
        }
        Ok(ConcentrationContext {
            basis,
            cov_eig,
            cov_hs_sq,
        })
    }

    pub fn covariance_spectrum(&self) -> Vec<f64> {
        self.cov_eig.values.iter().cloned().collect()
    }

    fn kernel_eval(&self, x: f64, y: f64) -> f64 {
        self.basis.kernel().eval_unchecked(x, y)
    }

    /// `q(x) = integral K(x, t)^2 drho(t)` by quadrature.
    fn q_at(&self, x: f64) -> f64 {
        let p = self.basis.grid().prob_weights();
        self.basis
            .grid()
            .nodes()
            .iter()
            .zip(p.iter())
            .map(|(&t, &pi)| {
                let k = self.kernel_eval(x, t);
                pi * k * k
            })
            .sum()
    }

    /// `||(1/m) sum_i K_{x_i} eps_i||_{H2}` via the reproducing property.
    pub fn noise_section_norm(&self, xs: &[f64], eps: &[f64]) -> f64 {
        let m = xs.len();
        let mut acc = 0.0;
        for i in 0..m {
            acc += eps[i] * eps[i] * self.kernel_eval(xs[i], xs[i]);
            for j in (i + 1)..m {
                acc += 2.0 * eps[i] * eps[j] * self.kernel_eval(xs[i], xs[j]);
            }
        }
        (acc.max(0.0)).sqrt() / m as f64
    }

    /// `||(1/m) sum_i (L_K + lambda)^{-1/2} K_{x_i} eps_i||_{H2}` through
    /// the Nystrom spectral representation of `L_K`.
    pub fn whitened_noise_norm(&self, lambda: f64, xs: &[f64], eps: &[f64]) -> f64 {
        let n = self.basis.len();
        let p = self.basis.grid().prob_weights();
        let tvals = self.cov_eig.clipped_values();
        // accumulate  v = (1/m) sum_i eps_i Psi(x_i),  Psi_k(x) =
        // (t_k + lambda)^{-1/2} t_k^{-1/2} <u_k, P^{1/2} k(x)>
        let mut acc = DVector::<f64>::zeros(n);
        let m = xs.len();
        for (i, &x) in xs.iter().enumerate() {
            let mut kx = DVector::zeros(n);
            for (j, &s) in self.basis.grid().nodes().iter().enumerate() {
                kx[j] = self.kernel_eval(x, s) * p[j].sqrt();
            }
            let proj = self.cov_eig.vectors.transpose() * kx;
            for k in 0..n {
                let t = tvals[k];
                if t > 0.0 {
                    acc[k] += eps[i] * proj[k] / (t.sqrt() * (t + lambda).sqrt());
                }
            }
        }
        acc.norm() / m as f64
    }

    /// `||S_x^* S_x - L_K||_{HS}` via exact rank-one expansions plus
    /// quadrature for the population terms.
    pub fn covariance_deviation_hs(&self, xs: &[f64]) -> f64 {
        let m = xs.len();
        let mf = m as f64;
        let mut pair = 0.0;
        for i in 0..m {
            let kii = self.kernel_eval(xs[i], xs[i]);
            pair += kii * kii;
            for j in (i + 1)..m {
                let k = self.kernel_eval(xs[i], xs[j]);
                pair += 2.0 * k * k;
            }
        }
        let cross: f64 = xs.iter().map(|&x| self.q_at(x)).sum();
        let hs_sq = pair / (mf * mf) - 2.0 * cross / mf + self.cov_hs_sq;
        hs_sq.max(0.0).sqrt()
    }
}

/// Monte Carlo check of the concentration bound for one sampled quantity:
/// empirical frequency of `deviation > 2 (Q/m + S/sqrt(m)) log(2/eta)`
/// per confidence level.
pub fn pinelis_tail_check(
    ctx: &ConcentrationContext,
    quantity: ConcentrationQuantity,
    noise: NoiseModel,
    trials: usize,
    m: usize,
    eta_grid: &[f64],
    seed: u64,
) -> Result<ConcentrationReport> {
    if trials == 0 || m == 0 {
        return Err(Error::invalid("pinelis_tail_check needs trials, m >= 1"));
    }
    if eta_grid.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::invalid("eta grid must lie in (0, 1)"));
    }
    let kappa = ctx.basis.kappa();
    let (m_cert, sigma_cert) = noise.bernstein_certificate();
    let (q_cert, s_cert) = match quantity {
        ConcentrationQuantity::NoiseSection => (kappa * m_cert, kappa * sigma_cert),
        ConcentrationQuantity::WhitenedNoiseSection { lambda } => {
            if !(lambda > 0.0) {
                return Err(Error::invalid("whitened quantity needs lambda > 0"));
            }
            let spectrum = ctx.covariance_spectrum();
            let effdim = effective_dimension(&spectrum, lambda)?.value;
            (kappa * m_cert / lambda.sqrt(), sigma_cert * effdim.sqrt())
        }
        ConcentrationQuantity::CovarianceDeviation => (kappa * kappa, kappa * kappa),
    };
    let bounds: Vec<f64> = eta_grid
        .iter()
        .map(|&eta| 2.0 * (q_cert / m as f64 + s_cert / (m as f64).sqrt()) * (2.0 / eta).ln())
        .collect();
    let (a, b) = ctx.basis.grid().domain();
    let mut exceed = alloc::vec![0usize; eta_grid.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = alloc::vec![0.0; m];
    let mut eps = alloc::vec![0.0; m];
    for _ in 0..trials {
        for x in xs.iter_mut() {
            *x = a + (b - a) * rng.random::<f64>();
        }
        let dev = match quantity {
            ConcentrationQuantity::NoiseSection => {
                for e in eps.iter_mut() {
                    *e = noise.sample(&mut rng);
                }
                ctx.noise_section_norm(&xs, &eps)
            }
            ConcentrationQuantity::WhitenedNoiseSection { lambda } => {
                for e in eps.iter_mut() {
                    *e = noise.sample(&mut rng);
                }
                ctx.whitened_noise_norm(lambda, &xs, &eps)
            }
            ConcentrationQuantity::CovarianceDeviation => ctx.covariance_deviation_hs(&xs),
        };
        for (k, &bound) in bounds.iter().enumerate() {
            if dev > bound {
                exceed[k] += 1;
            }
        }
    }
    let freq: Vec<f64> = exceed.iter().map(|&c| c as f64 / trials as f64).collect();
    Ok(ConcentrationReport {
        quantity,
        m,
        trials,
        eta_grid: eta_grid.to_vec(),
        empirical_tail_freq: freq,
        bound_values: bounds,
        q_cert,
        s_cert,
    })
}

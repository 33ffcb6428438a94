//! The regularized least-squares estimator via damped Gauss-Newton, the
//! population linearized solution, index functions, and the a-priori
//! parameter-choice rules.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::experiments::SampleSet;
use crate::hilbert::Space;
use crate::linalg;
use crate::operators::ForwardOp;

/// Index function `phi` describing solution smoothness.
#[derive(Debug, Clone, PartialEq)]
pub enum IndexFamily {
    /// `phi(t) = t^r`.
    Holder { r: f64 },
    /// `phi(t) = t^p log^{-nu}(1/t)`, defined for `t < 1`.
    LogType { p: u32, nu: f64 },
}

/// An index function together with the spectral interval `[0, domain_cap]`
/// it is used on (typically `kappa^2 L^2`).
#[derive(Debug, Clone, PartialEq)]
pub struct IndexFunction {
    pub family: IndexFamily,
    pub domain_cap: f64,
}

impl IndexFunction {
    pub fn new(family: IndexFamily, domain_cap: f64) -> Result<Self> {
        if !(domain_cap > 0.0) {
            return Err(Error::invalid("index function needs domain_cap > 0"));
        }
        match family {
            IndexFamily::Holder { r } => {
                if !(r >= 0.0) {
                    return Err(Error::invalid("holder exponent must be >= 0"));
                }
            }
            IndexFamily::LogType { p, nu } => {
                if p == 0 {
                    return Err(Error::invalid("log-type index needs p >= 1"));
                }
                if !(0.0..=1.0).contains(&nu) {
                    return Err(Error::invalid("log-type index needs nu in [0, 1]"));
                }
                if nu > 0.0 && domain_cap >= 1.0 {
                    return Err(Error::invalid(
                        "log-type index with nu > 0 needs domain_cap < 1",
                    ));
                }
            }
        }
        Ok(IndexFunction { family, domain_cap })
    }

    pub fn holder(r: f64, domain_cap: f64) -> Result<Self> {
        IndexFunction::new(IndexFamily::Holder { r }, domain_cap)
    }

    /// The Holder exponent when this is a Holder function.
    pub fn holder_exponent(&self) -> Option<f64> {
        match self.family {
            IndexFamily::Holder { r } => Some(r),
            IndexFamily::LogType { .. } => None,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self.family {
            IndexFamily::Holder { r } => t.powf(r),
            IndexFamily::LogType { p, nu } => {
                let lg = (1.0 / t).ln();
                t.powi(p as i32) * lg.powf(-nu)
            }
        }
    }

    /// `Theta(t) = t phi(t)`, the rule function for the class without an
    /// eigenvalue-decay constraint.
    pub fn theta_rule(&self, t: f64) -> f64 {
        t * self.eval(t)
    }

    /// `Psi(t) = t^{1/2 + 1/(2b)} phi(t)`, the rule function under
    /// polynomial eigenvalue decay with exponent `b`.
    pub fn psi_rule(&self, t: f64, b: f64) -> f64 {
        t.powf(0.5 + 0.5 / b) * self.eval(t)
    }

    /// Check on an `n`-point grid that `phi` is nondecreasing, and that
    /// `psi(t) = phi(t)/sqrt(t)` and `sqrt(t)/psi(t)` are nondecreasing
    /// (the hypotheses of the general upper-rate theorem). Violations are
    /// flagged, not errors: log-type functions satisfy them only on a
    /// sub-interval that the theory does not pin down.
    pub fn upper_rate_hypotheses_hold(&self, lambda_min: f64, n: usize) -> bool {
        if !(lambda_min > 0.0) || n < 2 {
            return false;
        }
        let lo = lambda_min.ln();
        let hi = self.domain_cap.ln();
        let mut prev_phi = f64::NEG_INFINITY;
        let mut prev_psi = f64::NEG_INFINITY;
        let mut prev_ratio = f64::NEG_INFINITY;
        let tol = 1e-12;
        for k in 0..n {
            let t = (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp();
            let phi = self.eval(t);
            let psi = phi / t.sqrt();
            let ratio = t.sqrt() / psi;
            if phi < prev_phi - tol || psi < prev_psi - tol || ratio < prev_ratio - tol {
                return false;
            }
            prev_phi = phi;
            prev_psi = psi;
            prev_ratio = ratio;
        }
        true
    }
}

/// Result of the a-priori parameter choice.
#[derive(Debug, Clone, Copy)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// The inversion target fell beyond the rule function at `domain_cap`;
    /// the cap itself is returned.
    pub saturated: bool,
}

/// A-priori choice `lambda = Theta^{-1}(m^{-1/2})` (no decay exponent) or
/// `lambda = Psi^{-1}(m^{-1/2})` (with decay exponent `b > 1`), by
/// bisection on `(0, domain_cap]` to relative tolerance 1e-10.
pub fn lambda_choice(m: usize, phi: &IndexFunction, b: Option<f64>) -> Result<LambdaChoice> {
    if m == 0 {
        return Err(Error::invalid("lambda_choice needs m >= 1"));
    }
    if let Some(b) = b {
        if !(b > 1.0) {
            return Err(Error::invalid("lambda_choice needs b > 1 when given"));
        }
    }
    let rule = |t: f64| match b {
        Some(b) => phi.psi_rule(t, b),
        None => phi.theta_rule(t),
    };
    let target = 1.0 / (m as f64).sqrt();
    let cap = phi.domain_cap;
    if rule(cap) < target {
        return Ok(LambdaChoice {
            lambda: cap,
            saturated: true,
        });
    }
    let mut lo = 0.0_f64;
    let mut hi = cap;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if rule(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-10 * hi {
            break;
        }
    }
    Ok(LambdaChoice {
        lambda: 0.5 * (lo + hi),
        saturated: false,
    })
}

/// Convergence-rate exponents for the Holder class.
#[derive(Debug, Clone, Copy)]
pub struct RateExponents {
    pub r: f64,
    pub b: f64,
    /// `b r / (2 b r + b + 1)`: H1 reconstruction-error exponent.
    pub h1_exponent: f64,
    /// `b / (2 b + 1)`: prediction-error exponent in the `r = 1/2` case.
    pub prediction_exponent: f64,
    /// `r / (2 r + 2)`: exponent for the class without decay constraint.
    pub pphi_exponent: f64,
    /// `false` when (r, b) lie outside the theory range
    /// (`1/2 <= r <= 1`, `b > 1`); Tikhonov regularization saturates at
    /// `r = 1`, so larger `r` cannot improve the rate.
    pub within_theory: bool,
}

pub fn rate_exponents(r: f64, b: f64) -> RateExponents {
    RateExponents {
        r,
        b,
        h1_exponent: b * r / (2.0 * b * r + b + 1.0),
        prediction_exponent: b / (2.0 * b + 1.0),
        pphi_exponent: r / (2.0 * r + 2.0),
        within_theory: (0.5..=1.0).contains(&r) && b > 1.0,
    }
}

/// The smallness condition `2 gamma ||w|| < 1` coupling the nonlinearity
/// constant to the source element.
pub fn smallness_check(gamma: f64, w_norm: f64) -> bool {
    2.0 * gamma * w_norm < 1.0
}

/// Gauss-Newton options.
#[derive(Debug, Clone, Copy)]
pub struct GnOptions {
    pub max_iters: usize,
    /// Relative H1 step size under which the iteration stops.
    pub step_tol: f64,
    /// Initial Levenberg damping as a fraction of `tr(J^T J / m) / n`.
    /// Linear operators skip damping entirely.
    pub damping: f64,
    /// Number of additional perturbed starts (0 = single start from fbar).
    pub multi_start: usize,
    pub multi_start_seed: u64,
    /// Relative spread of the perturbed starts.
    pub multi_start_spread: f64,
}

impl Default for GnOptions {
    fn default() -> Self {
        GnOptions {
            max_iters: 100,
            step_tol: 1e-9,
            damping: 1e-3,
            multi_start: 0,
            multi_start_seed: 0,
            multi_start_spread: 0.1,
        }
    }
}

/// A Tikhonov fit with solver diagnostics.
#[derive(Debug, Clone)]
pub struct TikhonovFit {
    /// Node values of the estimator.
    pub solution: DVector<f64>,
    pub lambda: f64,
    /// Objective after the start and after each accepted step;
    /// non-increasing.
    pub objective_trace: Vec<f64>,
    /// Number of accepted Gauss-Newton steps.
    pub gn_iters: usize,
    pub converged: bool,
    /// Root mean squared data misfit at the solution.
    pub residual_norm: f64,
    /// Penalty value `lambda ||f - fbar||^2_{H1}` at the solution.
    pub h1_penalty: f64,
}

/// The Tikhonov objective
/// `(1/m) sum_i (A(f)(x_i) - y_i)^2 + lambda ||f - fbar||^2_{H1}`.
///
/// `lambda = 0` is allowed here (pure misfit, diagnostics); the solver
/// itself requires `lambda > 0`.
pub fn tikhonov_objective(
    op: &ForwardOp,
    space: &Space,
    data: &SampleSet,
    f: &DVector<f64>,
    fbar: &DVector<f64>,
    lambda: f64,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("tikhonov objective needs lambda >= 0"));
    }
    if f.len() != fbar.len() {
        return Err(Error::shape("objective: f and fbar on different grids"));
    }
    let pred = op.apply(space, f, &data.x)?;
    let m = data.x.len() as f64;
    let misfit = pred
        .iter()
        .zip(data.y.iter())
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / m;
    let diff = f - fbar;
    let pen = space.h1_inner(&diff, &diff)?;
    Ok(misfit + lambda * pen)
}

/// Minimize the Tikhonov functional by damped Gauss-Newton from `fbar`.
///
/// At the iterate `f_k`, the step solves
/// `(J^T J / m + lambda M + mu I) d = -(J^T r / m + lambda M (f_k - fbar))`
/// with `J` the sampled Jacobian, `r` the residual vector, `M` the H1
/// metric and `mu` the Levenberg damping. Steps are accepted only when
/// they decrease the objective; `mu` grows tenfold on rejection and
/// shrinks by a third on acceptance. Linear operators run undamped and
/// converge in a single accepted step.
///
/// Non-convergence is reported through `converged = false`, never a
/// silently wrong solution.
pub fn tikhonov_solve(
    op: &ForwardOp,
    space: &Space,
    data: &SampleSet,
    fbar: &DVector<f64>,
    lambda: f64,
    opts: &GnOptions,
) -> Result<TikhonovFit> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("tikhonov_solve needs lambda > 0"));
    }
    if data.x.is_empty() {
        return Err(Error::InsufficientData(
            "tikhonov_solve needs samples".into(),
        ));
    }
    let base = gn_from_start(op, space, data, fbar, fbar, lambda, opts)?;
    if opts.multi_start == 0 {
        return Ok(base);
    }
    let mut best = base;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.multi_start_seed);
    let scale = opts.multi_start_spread * (space.h1_norm(fbar)?.max(1.0));
    for _ in 0..opts.multi_start {
        let mut start = fbar.clone();
        for v in start.iter_mut() {
            *v += scale * (rng.random::<f64>() * 2.0 - 1.0);
        }
        let fit = gn_from_start(op, space, data, &start, fbar, lambda, opts)?;
        let better = (fit.converged && !best.converged)
            || (fit.converged == best.converged
                && fit.objective_trace.last() < best.objective_trace.last());
        if better {
            best = fit;
        }
    }
    Ok(best)
}

fn gn_from_start(
    op: &ForwardOp,
    space: &Space,
    data: &SampleSet,
    start: &DVector<f64>,
    fbar: &DVector<f64>,
    lambda: f64,
    opts: &GnOptions,
) -> Result<TikhonovFit> {
    let n = space.len();
    let m = data.x.len() as f64;
    let metric = space.h1_metric();
    let mut v = start.clone();
    let mut obj = tikhonov_objective(op, space, data, &v, fbar, lambda)?;
    let mut trace = alloc::vec![obj];
    let mut mu = 0.0_f64;
    let mut mu_seeded = op.is_linear();
    let mut converged = false;
    let mut iters = 0;

    'outer: for _ in 0..opts.max_iters {
        let pred = op.apply(space, &v, &data.x)?;
        let r = &pred - DVector::from_column_slice(&data.y);
        let jac = op.jacobian(space, &v, &data.x)?;
        let jtj = jac.transpose() * &jac / m;
        if !mu_seeded {
            mu = opts.damping * jtj.trace() / n as f64;
            mu_seeded = true;
        }
        let grad = jac.transpose() * &r / m + &metric * (&v - fbar) * lambda;
        let h = &jtj + &metric * lambda;

        let mut accepted = false;
        let mut rel_step = f64::INFINITY;
        for _attempt in 0..30 {
            let mut damped = h.clone();
            for i in 0..n {
                damped[(i, i)] += mu;
            }
            let delta = match damped.lu().solve(&(-&grad)) {
                Some(d) => d,
                None => {
                    mu = if mu == 0.0 { 1e-12 } else { mu * 10.0 };
                    continue;
                }
            };
            rel_step = space.h1_norm(&delta)? / space.h1_norm(&v)?.max(f64::MIN_POSITIVE);
            if rel_step < opts.step_tol {
                // Step is negligible: already at the (damped) stationary
                // point up to rounding.
                converged = true;
                break 'outer;
            }
            let vtry = &v + &delta;
            let otry = tikhonov_objective(op, space, data, &vtry, fbar, lambda)?;
            if otry < obj {
                v = vtry;
                obj = otry;
                trace.push(obj);
                if mu > 0.0 && !op.is_linear() {
                    mu /= 3.0;
                }
                accepted = true;
                iters += 1;
                break;
            }
            mu = if mu == 0.0 { 1e-12 } else { mu * 10.0 };
        }
        if !accepted {
            converged = false;
            break;
        }
        if rel_step < opts.step_tol {
            converged = true;
            break;
        }
    }

    let pred = op.apply(space, &v, &data.x)?;
    let residual_norm = (pred
        .iter()
        .zip(data.y.iter())
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / m)
        .sqrt();
    let diff = &v - fbar;
    let h1_penalty = lambda * space.h1_inner(&diff, &diff)?;
    Ok(TikhonovFit {
        solution: v,
        lambda,
        objective_trace: trace,
        gn_iters: iters,
        converged,
        residual_norm,
        h1_penalty,
    })
}

/// Linearized population Tikhonov solution in folded coordinates:
/// `u = (T + lambda I)^{-1} (T u_rho + lambda u_bar)`.
///
/// `t` must be the folded (symmetric PSD) covariance of the linearization;
/// the result satisfies `lambda (u - u_bar) = T (u_rho - u)` exactly up to
/// the linear solve.
pub fn population_linearized_solution(
    t: &DMatrix<f64>,
    f_rho_folded: &DVector<f64>,
    fbar_folded: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(
            "population linearized solution needs lambda > 0",
        ));
    }
    let n = t.nrows();
    if t.ncols() != n || f_rho_folded.len() != n || fbar_folded.len() != n {
        return Err(Error::shape("population_linearized_solution shapes"));
    }
    let mut a = t.clone();
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let rhs = t * f_rho_folded + fbar_folded * lambda;
    linalg::solve_spd(&a, &rhs)
}

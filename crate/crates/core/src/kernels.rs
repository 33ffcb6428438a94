//! Scalar reproducing kernels on a closed interval, their Gram matrices,
//! the sup-norm constant `kappa`, and eigenvalue-decay estimation.

use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, SymEig};

/// Kernel family with its parameters.
///
/// * `Gaussian`: `exp(-(x-y)^2 / (2 l^2))`.
/// * `Sobolev1d`: the reproducing kernel of `W^{k,2}(R)` restricted to the
///   interval. For `k = 1` this is `(1/2) exp(-|x-y|)` in closed form;
///   higher orders use the matching half-integer Matérn representation
///   `c_k * matern(nu = k - 1/2, l = sqrt(2k - 1))` with
///   `c_k = C(2k-2, k-1) / (2 * 4^{k-1})`, which reproduces the same space
///   and the same `n^{-2k}` eigenvalue decay.
/// * `Matern`: standard Matérn kernel; only half-integer smoothness
///   (`nu = p + 1/2`) is supported, where the kernel has a closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    Gaussian { lengthscale: f64 },
    Sobolev1d { order: u32 },
    Matern { smoothness: f64, lengthscale: f64 },
}

/// A positive semi-definite kernel on the interval `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    family: KernelFamily,
    a: f64,
    b: f64,
}

const MAX_HALF_INTEGER_P: u32 = 10;

impl Kernel {
    pub fn new(family: KernelFamily, a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::invalid(alloc::format!(
                "kernel domain [{a}, {b}] is not a proper interval"
            )));
        }
        match family {
            KernelFamily::Gaussian { lengthscale } => {
                if !(lengthscale > 0.0) {
                    return Err(Error::invalid("gaussian lengthscale must be positive"));
                }
            }
            KernelFamily::Sobolev1d { order } => {
                if order == 0 || order > MAX_HALF_INTEGER_P {
                    return Err(Error::invalid(alloc::format!(
                        "sobolev1d order must be in 1..={MAX_HALF_INTEGER_P}"
                    )));
                }
            }
            KernelFamily::Matern {
                smoothness,
                lengthscale,
            } => {
                if !(lengthscale > 0.0) {
                    return Err(Error::invalid("matern lengthscale must be positive"));
                }
                half_integer_p(smoothness)?;
            }
        }
        Ok(Kernel { family, a, b })
    }

    pub fn gaussian(lengthscale: f64, a: f64, b: f64) -> Result<Self> {
        Kernel::new(KernelFamily::Gaussian { lengthscale }, a, b)
    }

    pub fn sobolev1d(order: u32, a: f64, b: f64) -> Result<Self> {
        Kernel::new(KernelFamily::Sobolev1d { order }, a, b)
    }

    pub fn matern(smoothness: f64, lengthscale: f64, a: f64, b: f64) -> Result<Self> {
        Kernel::new(
            KernelFamily::Matern {
                smoothness,
                lengthscale,
            },
            a,
            b,
        )
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.a && x <= self.b
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                x,
                lo: self.a,
                hi: self.b,
            })
        }
    }

    /// Evaluate `K(x, y)`; both points must lie in the domain.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        self.check_domain(x)?;
        self.check_domain(y)?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Evaluate without the domain check (hot path for Gram assembly).
    pub fn eval_unchecked(&self, x: f64, y: f64) -> f64 {
        let r = (x - y).abs();
        match self.family {
            KernelFamily::Gaussian { lengthscale } => {
                (-r * r / (2.0 * lengthscale * lengthscale)).exp()
            }
            KernelFamily::Sobolev1d { order } => {
                // c_k * matern(nu = k - 1/2, l = sqrt(2k - 1)):
                // the scaled distance u = sqrt(2 nu) r / l collapses to r.
                sobolev_amplitude(order) * matern_half_integer(order - 1, r)
            }
            KernelFamily::Matern {
                smoothness,
                lengthscale,
            } => {
                let p = half_integer_p(smoothness).expect("validated at construction");
                let u = (2.0 * smoothness).sqrt() * r / lengthscale;
                matern_half_integer(p, u)
            }
        }
    }

    /// `kappa = sqrt(max over the probe grid of K(x, x))`.
    ///
    /// For the translation-invariant families here this equals
    /// `sqrt(K(x, x))` at any point, but the probe keeps the contract
    /// honest for future families.
    pub fn kappa(&self, probe_grid: &[f64]) -> Result<f64> {
        if probe_grid.is_empty() {
            return Err(Error::InsufficientData(
                "kappa needs a non-empty probe grid".into(),
            ));
        }
        let mut max = f64::NEG_INFINITY;
        for &x in probe_grid {
            let v = self.eval(x, x)?;
            if v > max {
                max = v;
            }
        }
        Ok(max.sqrt())
    }
}

/// `nu - 1/2` as a non-negative integer, or an argument error.
fn half_integer_p(nu: f64) -> Result<u32> {
    if !(nu > 0.0) {
        return Err(Error::invalid("matern smoothness must be positive"));
    }
    let p = nu - 0.5;
    let rounded = p.round();
    if (p - rounded).abs() > 1e-9 || rounded < 0.0 || rounded > MAX_HALF_INTEGER_P as f64 {
        return Err(Error::invalid(alloc::format!(
            "matern smoothness {nu} is not a supported half-integer (p + 1/2, p <= {MAX_HALF_INTEGER_P})"
        )));
    }
    Ok(rounded as u32)
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0_f64, |acc, k| acc * k as f64)
}

fn binomial(n: u32, k: u32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// `(1/(2 pi)) * integral of (1 + xi^2)^{-k} d xi = C(2k-2, k-1) / (2 * 4^{k-1})`.
fn sobolev_amplitude(k: u32) -> f64 {
    binomial(2 * k - 2, k - 1) / (2.0 * 4.0_f64.powi(k as i32 - 1))
}

/// Half-integer Matérn profile in the scaled distance `u = sqrt(2 nu) r / l`,
/// normalized so the diagonal equals one.
fn matern_half_integer(p: u32, u: f64) -> f64 {
    let mut poly = 0.0;
    for i in 0..=p {
        poly +=
            factorial(p + i) / (factorial(i) * factorial(p - i)) * (2.0 * u).powi((p - i) as i32);
    }
    (factorial(p) / factorial(2 * p)) * poly * (-u).exp()
}

/// Gram matrix `G[i][j] = K(nodes[i], nodes[j])`, symmetric by construction.
///
/// Nodes must be pairwise distinct (a duplicate makes the Gram exactly
/// singular) and inside the kernel domain.
pub fn gram(kernel: &Kernel, nodes: &[f64]) -> Result<DMatrix<f64>> {
    let n = nodes.len();
    for (i, &x) in nodes.iter().enumerate() {
        kernel.check_domain(x)?;
        for (j, &y) in nodes.iter().enumerate().skip(i + 1) {
            if x == y {
                return Err(Error::DuplicateNodes { i, j });
            }
        }
    }
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval_unchecked(nodes[i], nodes[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Fitted polynomial eigenvalue decay `t_n <= beta * n^{-b}`.
#[derive(Debug, Clone)]
pub struct EigenDecay {
    /// Empirical eigenvalues, descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Fitted decay exponent.
    pub fitted_b: f64,
    /// Fitted prefactor, inflated so `t_n <= beta n^{-b}` holds for every
    /// retained `n`.
    pub fitted_beta: f64,
    /// RMS residual of the log-log least-squares fit.
    pub fit_residual: f64,
    /// Number of eigenvalues retained for the fit.
    pub retained: usize,
}

impl EigenDecay {
    /// Whether the fit certifies the polynomial-decay assumption (`b > 1`).
    pub fn satisfies_decay_assumption(&self) -> bool {
        self.fitted_b > 1.0
    }
}

/// Relative floor under which eigenvalues are dominated by floating-point
/// noise and excluded from the decay fit.
pub const DECAY_FIT_RELATIVE_FLOOR: f64 = 1e-12;

/// Estimate the polynomial decay of the spectrum of the weighted operator
/// `W^{1/2} G W^{1/2}` (the empirical covariance-operator spectrum).
///
/// Fits `log t_n ~ log beta - b log n` by least squares over the reliable
/// range `t_n > 1e-12 * t_1`, then inflates `beta` so the bound holds for
/// every retained eigenvalue. Fewer than four reliable eigenvalues is an
/// insufficient-data error.
pub fn estimate_decay(gram: &DMatrix<f64>, weights: &[f64]) -> Result<EigenDecay> {
    if gram.nrows() != weights.len() {
        return Err(Error::shape(alloc::format!(
            "gram is {}x{} but {} weights were given",
            gram.nrows(),
            gram.ncols(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::invalid("quadrature weights must be positive"));
    }
    let n = weights.len();
    let mut m = gram.clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= (weights[i] * weights[j]).sqrt();
        }
    }
    let eig = SymEig::new(&m)?.clamped_nonneg();
    let eigenvalues: Vec<f64> = eig.values.iter().cloned().collect();
    fit_eigen_decay(&eigenvalues)
}

/// Decay fit on an already-computed descending spectrum.
pub fn fit_eigen_decay(eigenvalues: &[f64]) -> Result<EigenDecay> {
    let t1 = eigenvalues.first().copied().unwrap_or(0.0);
    if !(t1 > 0.0) {
        return Err(Error::InsufficientData(
            "spectrum is identically zero".into(),
        ));
    }
    let floor = DECAY_FIT_RELATIVE_FLOOR * t1;
    let retained = eigenvalues.iter().take_while(|&&t| t > floor).count();
    if retained < 4 {
        return Err(Error::InsufficientData(alloc::format!(
            "only {retained} eigenvalues above the reliability floor; need at least 4"
        )));
    }
    let xs: Vec<f64> = (1..=retained).map(|k| -((k as f64).ln())).collect();
    let ys: Vec<f64> = eigenvalues[..retained].iter().map(|t| t.ln()).collect();
    let (log_beta, b, residual) = linalg::linear_fit(&xs, &ys)?;
    let mut beta = log_beta.exp();
    for (k, &t) in eigenvalues[..retained].iter().enumerate() {
        let bound = t * ((k + 1) as f64).powf(b);
        if bound > beta {
            beta = bound;
        }
    }
    Ok(EigenDecay {
        eigenvalues: eigenvalues.to_vec(),
        fitted_b: b,
        fitted_beta: beta,
        fit_residual: residual,
        retained,
    })
}

/// Two-sided polynomial decay certificate `alpha n^{-b} <= t_n <= beta n^{-b}`
/// over the first `count` eigenvalues.
#[derive(Debug, Clone, Copy)]
pub struct DecayCertificate {
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub count: usize,
}

/// Fit `b` over the first `count` eigenvalues and certify the two-sided
/// bound on that range. Used by the lower-bound construction, which needs
/// `alpha n^{-b} <= t_n` on the modes it populates.
pub fn certify_decay(eigenvalues: &[f64], count: usize) -> Result<DecayCertificate> {
    if count < 4 || count > eigenvalues.len() {
        return Err(Error::invalid(alloc::format!(
            "certify_decay range {count} outside 4..={}",
            eigenvalues.len()
        )));
    }
    if !(eigenvalues[count - 1] > 0.0) {
        return Err(Error::InsufficientData(
            "certify_decay range reaches non-positive eigenvalues".into(),
        ));
    }
    let xs: Vec<f64> = (1..=count).map(|k| -((k as f64).ln())).collect();
    let ys: Vec<f64> = eigenvalues[..count].iter().map(|t| t.ln()).collect();
    let (log_beta, b, _) = linalg::linear_fit(&xs, &ys)?;
    let mut beta = log_beta.exp();
    let mut alpha = f64::INFINITY;
    for (k, &t) in eigenvalues[..count].iter().enumerate() {
        let scaled = t * ((k + 1) as f64).powf(b);
        beta = beta.max(scaled);
        alpha = alpha.min(scaled);
    }
    Ok(DecayCertificate {
        b,
        alpha,
        beta,
        count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sobolev_amplitudes_match_the_integral_constants() {
        // C(2k-2, k-1) / (2 * 4^{k-1})
        assert_eq!(sobolev_amplitude(1), 0.5);
        assert_eq!(sobolev_amplitude(2), 0.25);
        assert_eq!(sobolev_amplitude(3), 6.0 / 32.0);
    }

    #[test]
    fn matern_profile_normalizes_the_diagonal() {
        for p in 0..=4 {
            assert!((matern_half_integer(p, 0.0) - 1.0).abs() < 1e-14);
        }
        // nu = 1/2 reduces to the exponential profile
        assert!((matern_half_integer(0, 1.3) - (-1.3_f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn half_integer_validation() {
        assert_eq!(half_integer_p(0.5).unwrap(), 0);
        assert_eq!(half_integer_p(2.5).unwrap(), 2);
        assert!(half_integer_p(1.0).is_err());
        assert!(half_integer_p(-0.5).is_err());
    }
}

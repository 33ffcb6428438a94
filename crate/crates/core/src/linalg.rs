//! Small dense linear-algebra helpers shared across the crate.
//!
//! Everything here operates on `nalgebra` dynamic matrices. Self-adjoint
//! operators are kept in *folded* coordinates (see [`crate::hilbert`]),
//! where they are plain symmetric matrices and spectral calculus reduces
//! to a symmetric eigendecomposition.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff below which a spectral value is treated as
/// numerical noise and clamped to zero before applying a spectral
/// function. Square roots and reciprocals amplify eigenvalue jitter at
/// the bottom of the spectrum; without the clamp, fixed-point iterations
/// on `phi(T)` stall around 1e-8.
pub const SPECTRAL_CLIP: f64 = 1e-13;

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues, sorted descending.
    pub values: DVector<f64>,
    /// Matching eigenvectors as columns.
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    /// Decompose `m` (assumed symmetric; only its symmetric part is used).
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::shape(alloc::format!(
                "symmetric eigendecomposition needs a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let sym = (m + m.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[j]
                .partial_cmp(&eig.eigenvalues[i])
                .unwrap_or(core::cmp::Ordering::Equal)
        });
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(SymEig { values, vectors })
    }

    /// Clamp negative eigenvalues to zero (PSD projection of the values).
    pub fn clamped_nonneg(mut self) -> Self {
        for v in self.values.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self
    }

    /// Apply a scalar function to the spectrum: `U f(Lambda) U^T`.
    ///
    /// Eigenvalues below [`SPECTRAL_CLIP`] relative to the largest are
    /// zeroed first, and `f` is applied to the clipped values.
    pub fn spectral_fn(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let vals = self.clipped_values();
        let n = vals.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fv = f(vals[j]);
            scaled.column_mut(j).scale_mut(fv);
        }
        &scaled * self.vectors.transpose()
    }

    /// Apply a scalar function of the spectrum to a vector: `U f(Lambda) U^T g`.
    pub fn spectral_fn_apply(&self, f: impl Fn(f64) -> f64, g: &DVector<f64>) -> DVector<f64> {
        let vals = self.clipped_values();
        let mut coeffs = self.vectors.transpose() * g;
        for j in 0..vals.len() {
            coeffs[j] *= f(vals[j]);
        }
        &self.vectors * coeffs
    }

    /// Eigenvalues with magnitudes below `SPECTRAL_CLIP * max |t|` zeroed;
    /// signs of genuine eigenvalues are preserved.
    pub fn clipped_values(&self) -> DVector<f64> {
        let max = self.values.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()));
        let floor = SPECTRAL_CLIP * max;
        DVector::from_iterator(
            self.values.len(),
            self.values
                .iter()
                .map(|&v| if v.abs() < floor { 0.0 } else { v }),
        )
    }

    /// Pseudo-inverse apply with the same relative cutoff.
    pub fn pinv_apply(&self, g: &DVector<f64>) -> DVector<f64> {
        self.spectral_fn_apply(|t| if t > 0.0 { 1.0 / t } else { 0.0 }, g)
    }

    /// Symmetric square root `U Lambda^{1/2} U^T`.
    pub fn sqrt_matrix(&self) -> DMatrix<f64> {
        self.spectral_fn(|t| t.sqrt())
    }
}

/// `true` iff `m` is symmetric and its smallest eigenvalue is no smaller
/// than `-tol_rel` times the largest.
pub fn is_psd(m: &DMatrix<f64>, tol_rel: f64) -> Result<bool> {
    let eig = SymEig::new(m)?;
    let max = eig.values.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(min >= -tol_rel * max.max(f64::MIN_POSITIVE))
}

/// Solve the symmetric positive definite system `A x = b` by Cholesky,
/// falling back to LU when the factorization fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::SingularSystem("SPD solve failed in both Cholesky and LU".into()))
}

/// Frobenius (Hilbert-Schmidt) norm.
pub fn hs_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Spectral (operator 2-) norm of a symmetric matrix.
pub fn sym_operator_norm(m: &DMatrix<f64>) -> Result<f64> {
    let eig = SymEig::new(m)?;
    Ok(eig.values.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs())))
}

/// Ordinary least squares for `y ~ a + b x`, returning `(a, b, rms_residual)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::shape("linear_fit inputs differ in length"));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData(
            "linear_fit needs at least two points".into(),
        ));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(&u, &v)| (u - mx) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "linear_fit abscissae are all equal".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(&u, &v)| {
            let e = v - intercept - slope * u;
            e * e
        })
        .sum();
    Ok((intercept, slope, (rss / nf).sqrt()))
}

/// Standard error of the slope in the `y ~ a + b x` least-squares fit.
pub fn slope_stderr(x: &[f64], y: &[f64]) -> Result<f64> {
    let (a, b, _) = linear_fit(x, y)?;
    let n = x.len();
    if n <= 2 {
        return Ok(f64::INFINITY);
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(&u, &v)| {
            let e = v - a - b * u;
            e * e
        })
        .sum();
    Ok((rss / (nf - 2.0) / sxx).sqrt())
}

/// Median of a slice (empty input is an error).
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("median of empty slice".into()));
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

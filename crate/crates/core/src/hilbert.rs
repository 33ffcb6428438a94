//! Discretized Hilbert spaces: the quadrature grid, the solution space H1,
//! the reproducing-kernel image space H2, the sampling operator and its
//! adjoint, empirical covariance operators, and the effective dimension.
//!
//! # Coordinates
//!
//! A function is stored by its values `v` at the grid nodes. Two inner
//! products appear:
//!
//! * H1, the solution space: either the weighted-l2 product
//!   `<u, v> = sum_i w_i u_i v_i` (default) or the RKHS product
//!   `<u, v> = u^T G^+ v` of the kernel interpolants;
//! * H2, the image space: always the RKHS product.
//!
//! *Folded* coordinates `u = M^{1/2} v` (with `M` the metric) turn either
//! inner product into the plain dot product, so self-adjoint operators
//! become symmetric matrices and spectral calculus is an ordinary
//! symmetric eigendecomposition. [`Space::fold`] and [`Space::unfold`]
//! convert between the two representations.

use alloc::sync::Arc;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{gram, Kernel};
use crate::linalg::SymEig;

/// Quadrature grid on `[a, b]`: strictly increasing nodes with positive
/// weights summing to `b - a` (Lebesgue) or to one (`normalized`).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    a: f64,
    b: f64,
    normalized: bool,
}

impl Grid {
    /// Composite trapezoid rule on `n` uniform nodes.
    pub fn trapezoid(a: f64, b: f64, n: usize, normalized: bool) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::invalid(alloc::format!(
                "grid domain [{a}, {b}] is not a proper interval"
            )));
        }
        if n < 2 {
            return Err(Error::invalid("trapezoid grid needs at least 2 nodes"));
        }
        let h = (b - a) / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| a + h * i as f64).collect();
        let mut weights = alloc::vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        if normalized {
            let total = b - a;
            for w in weights.iter_mut() {
                *w /= total;
            }
        }
        Ok(Grid {
            nodes,
            weights,
            a,
            b,
            normalized,
        })
    }

    /// Grid from explicit nodes and weights (e.g. a single-node measure).
    pub fn from_parts(nodes: Vec<f64>, weights: Vec<f64>, normalized: bool) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::shape(alloc::format!(
                "{} nodes with {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("grid nodes must be strictly increasing"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("grid weights must be positive"));
        }
        let a = nodes[0];
        let b = *nodes.last().expect("non-empty");
        Ok(Grid {
            nodes,
            weights,
            a,
            b,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    /// Weights rescaled to sum to one (the probability measure `rho_X`).
    pub fn prob_weights(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    /// Quadrature of node values against the probability measure.
    pub fn prob_quadrature(&self, values: &DVector<f64>) -> f64 {
        let total: f64 = self.weights.iter().sum();
        self.weights
            .iter()
            .zip(values.iter())
            .map(|(w, v)| w * v)
            .sum::<f64>()
            / total
    }

    /// `L^2(rho_X)` norm of node values by quadrature.
    pub fn l2_norm(&self, values: &DVector<f64>) -> f64 {
        let total: f64 = self.weights.iter().sum();
        (self
            .weights
            .iter()
            .zip(values.iter())
            .map(|(w, v)| w * v * v)
            .sum::<f64>()
            / total)
            .sqrt()
    }
}

/// Relative proximity under which an evaluation point is snapped to a grid
/// node, so interpolation reproduces node values exactly.
const NODE_SNAP_REL: f64 = 1e-12;

/// Kernel-plus-grid machinery for the image space H2: the Gram matrix,
/// its eigendecomposition (used as a pseudo-inverse for interpolation and
/// RKHS norms), and the derived square-root factors.
#[derive(Debug, Clone)]
pub struct RkhsBasis {
    kernel: Kernel,
    grid: Grid,
    gram: DMatrix<f64>,
    gram_eig: SymEig,
    gram_sqrt: DMatrix<f64>,
    gram_sqrt_pinv: DMatrix<f64>,
    kappa: f64,
}

impl RkhsBasis {
    pub fn new(kernel: Kernel, grid: Grid) -> Result<Arc<Self>> {
        let (ka, kb) = kernel.domain();
        let (ga, gb) = grid.domain();
        if ga < ka || gb > kb {
            return Err(Error::invalid(alloc::format!(
                "grid [{ga}, {gb}] exceeds kernel domain [{ka}, {kb}]"
            )));
        }
        let g = gram(&kernel, grid.nodes())?;
        let eig = SymEig::new(&g)?.clamped_nonneg();
        let gram_sqrt = eig.spectral_fn(|t| t.sqrt());
        let gram_sqrt_pinv = eig.spectral_fn(|t| if t > 0.0 { 1.0 / t.sqrt() } else { 0.0 });
        let kappa = kernel.kappa(grid.nodes())?;
        Ok(Arc::new(RkhsBasis {
            kernel,
            grid,
            gram: g,
            gram_eig: eig,
            gram_sqrt,
            gram_sqrt_pinv,
            kappa,
        }))
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_eig(&self) -> &SymEig {
        &self.gram_eig
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Sup-norm constant of the kernel over the grid.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Kernel section `K(nodes, x)` as node values.
    pub fn section(&self, x: f64) -> Result<DVector<f64>> {
        let n = self.grid.len();
        let mut out = DVector::zeros(n);
        for (i, &s) in self.grid.nodes().iter().enumerate() {
            out[i] = self.kernel.eval(x, s)?;
        }
        Ok(out)
    }

    fn snap_to_node(&self, x: f64) -> Option<usize> {
        let (a, b) = self.grid.domain();
        let tol = NODE_SNAP_REL * (b - a);
        self.grid.nodes().iter().position(|&s| (s - x).abs() <= tol)
    }

    /// Interpolation weight vector `e(x)` with `e(x)^T v` the kernel
    /// interpolant of node values `v` at `x`. At a grid node this is the
    /// coordinate vector, so node values are reproduced exactly.
    pub fn interpolation_weights(&self, x: f64) -> Result<DVector<f64>> {
        if let Some(j) = self.snap_to_node(x) {
            let mut e = DVector::zeros(self.grid.len());
            e[j] = 1.0;
            return Ok(e);
        }
        let section = self.section(x)?;
        Ok(self.gram_eig.pinv_apply(&section))
    }

    /// Evaluate the interpolant of `values` at a single point.
    pub fn interpolate(&self, values: &DVector<f64>, x: f64) -> Result<f64> {
        self.check_len(values)?;
        Ok(self.interpolation_weights(x)?.dot(values))
    }

    /// Evaluation matrix `E` with `E[i, .] = e(x_i)`, so `E v` samples the
    /// interpolant of `v` at the points.
    pub fn eval_matrix(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.grid.len();
        let mut e = DMatrix::zeros(points.len(), n);
        for (i, &x) in points.iter().enumerate() {
            let row = self.interpolation_weights(x)?;
            e.row_mut(i).copy_from(&row.transpose());
        }
        Ok(e)
    }

    /// RKHS inner product of two node-value functions, `u^T G^+ v`.
    pub fn h2_inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        self.check_len(u)?;
        self.check_len(v)?;
        Ok(self.gram_eig.pinv_apply(v).dot(u))
    }

    /// RKHS norm of a node-value function.
    pub fn h2_norm(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(self.h2_inner(v, v)?.max(0.0).sqrt())
    }

    fn check_len(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.grid.len() {
            return Err(Error::shape(alloc::format!(
                "vector of length {} on a grid of {} nodes",
                v.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }
}

/// Apply the sampling operator: evaluate the H2 interpolant of `values`
/// at the design points.
pub fn sampling_apply(
    basis: &RkhsBasis,
    values: &DVector<f64>,
    points: &[f64],
) -> Result<DVector<f64>> {
    basis.check_len(values)?;
    let mut out = DVector::zeros(points.len());
    for (i, &x) in points.iter().enumerate() {
        out[i] = basis.interpolate(values, x)?;
    }
    Ok(out)
}

/// Adjoint of the sampling operator under the `1/m`-weighted product on
/// `Y^m`: node values of `(1/m) sum_i K(., x_i) c_i`.
pub fn sampling_adjoint(
    basis: &RkhsBasis,
    points: &[f64],
    c: &DVector<f64>,
) -> Result<DVector<f64>> {
    if points.len() != c.len() {
        return Err(Error::shape(alloc::format!(
            "{} design points with {} coefficients",
            points.len(),
            c.len()
        )));
    }
    let n = basis.len();
    let m = points.len();
    let mut out = DVector::zeros(n);
    for (i, &x) in points.iter().enumerate() {
        let sec = basis.section(x)?;
        out.axpy(c[i] / m as f64, &sec, 1.0);
    }
    Ok(out)
}

/// Matrix of the quadrature-discretized covariance operator `L_K` in its
/// symmetric form `W^{1/2} G W^{1/2}`; its eigenvalues approximate the
/// covariance spectrum, and its trace is exactly `sum_i w_i K(x_i, x_i)`.
pub fn empirical_covariance(basis: &RkhsBasis) -> DMatrix<f64> {
    let w = basis.grid().weights();
    let n = w.len();
    let mut m = basis.gram().clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= (w[i] * w[j]).sqrt();
        }
    }
    m
}

/// H1 inner-product mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Weighted-l2 discretization of `L^2([a, b])` (the default).
    WeightedL2,
    /// RKHS norm of the kernel interpolant (H1 = H2).
    Rkhs,
}

/// The discretized pair (H1, H2) sharing one kernel-grid basis.
#[derive(Debug, Clone)]
pub struct Space {
    basis: Arc<RkhsBasis>,
    h1_mode: NormMode,
}

impl Space {
    pub fn new(basis: Arc<RkhsBasis>, h1_mode: NormMode) -> Self {
        Space { basis, h1_mode }
    }

    pub fn basis(&self) -> &RkhsBasis {
        &self.basis
    }

    pub fn basis_arc(&self) -> Arc<RkhsBasis> {
        Arc::clone(&self.basis)
    }

    pub fn grid(&self) -> &Grid {
        self.basis.grid()
    }

    pub fn kernel(&self) -> &Kernel {
        self.basis.kernel()
    }

    pub fn h1_mode(&self) -> NormMode {
        self.h1_mode
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// H1 inner product of node-value functions.
    pub fn h1_inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        match self.h1_mode {
            NormMode::WeightedL2 => {
                if u.len() != v.len() || u.len() != self.len() {
                    return Err(Error::shape("h1_inner length mismatch"));
                }
                Ok(self
                    .grid()
                    .weights()
                    .iter()
                    .zip(u.iter().zip(v.iter()))
                    .map(|(w, (a, b))| w * a * b)
                    .sum())
            }
            NormMode::Rkhs => self.basis.h2_inner(u, v),
        }
    }

    pub fn h1_norm(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(self.h1_inner(v, v)?.max(0.0).sqrt())
    }

    /// Metric matrix `M` of the H1 product (`<u, v> = u^T M v`): the
    /// weight diagonal, or the Gram pseudo-inverse in RKHS mode.
    pub fn h1_metric(&self) -> DMatrix<f64> {
        match self.h1_mode {
            NormMode::WeightedL2 => DMatrix::from_diagonal(&DVector::from_iterator(
                self.len(),
                self.grid().weights().iter().cloned(),
            )),
            NormMode::Rkhs => {
                self.basis
                    .gram_eig()
                    .spectral_fn(|t| if t > 0.0 { 1.0 / t } else { 0.0 })
            }
        }
    }

    /// Fold node values into orthonormal H1 coordinates (`u = M^{1/2} v`).
    pub fn fold(&self, values: &DVector<f64>) -> DVector<f64> {
        match self.h1_mode {
            NormMode::WeightedL2 => DVector::from_iterator(
                values.len(),
                self.grid()
                    .weights()
                    .iter()
                    .zip(values.iter())
                    .map(|(w, v)| w.sqrt() * v),
            ),
            NormMode::Rkhs => &self.basis.gram_sqrt_pinv * values,
        }
    }

    /// Unfold H1 coordinates back to node values.
    pub fn unfold(&self, folded: &DVector<f64>) -> DVector<f64> {
        match self.h1_mode {
            NormMode::WeightedL2 => DVector::from_iterator(
                folded.len(),
                self.grid()
                    .weights()
                    .iter()
                    .zip(folded.iter())
                    .map(|(w, v)| v / w.sqrt()),
            ),
            NormMode::Rkhs => &self.basis.gram_sqrt * folded,
        }
    }

    /// Right-multiply a matrix acting on node values by the unfold map, so
    /// it acts on folded coordinates instead.
    pub fn unfold_right(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self.h1_mode {
            NormMode::WeightedL2 => {
                let mut out = m.clone();
                for (j, w) in self.grid().weights().iter().enumerate() {
                    out.column_mut(j).scale_mut(1.0 / w.sqrt());
                }
                out
            }
            NormMode::Rkhs => m * &self.basis.gram_sqrt,
        }
    }
}

/// Effective dimension `N(lambda) = sum_n t_n / (t_n + lambda)` of a
/// spectrum, with its trivial `tr / lambda` bound and, when a decay
/// certificate is supplied, the polynomial-decay bound `C lambda^{-1/b}`.
#[derive(Debug, Clone, Copy)]
pub struct EffDim {
    pub lambda: f64,
    pub value: f64,
    pub trivial_bound: f64,
    pub decay_bound: Option<f64>,
}

/// Effective dimension of a non-negative spectrum at `lambda > 0`.
pub fn effective_dimension(eigenvalues: &[f64], lambda: f64) -> Result<EffDim> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("effective dimension needs lambda > 0"));
    }
    if eigenvalues.iter().any(|&t| t < 0.0) {
        return Err(Error::invalid(
            "effective dimension needs a non-negative spectrum",
        ));
    }
    let value: f64 = eigenvalues.iter().map(|&t| t / (t + lambda)).sum();
    let trace: f64 = eigenvalues.iter().sum();
    Ok(EffDim {
        lambda,
        value,
        trivial_bound: trace / lambda,
        decay_bound: None,
    })
}

/// Fit the constant of the decay bound `N(lambda) <= C lambda^{-1/b}` by
/// maximizing `N(lambda) lambda^{1/b}` over the given grid.
pub fn decay_bound_constant(eigenvalues: &[f64], b: f64, lambda_grid: &[f64]) -> Result<f64> {
    if !(b > 1.0) {
        return Err(Error::invalid("decay bound needs b > 1"));
    }
    if lambda_grid.is_empty() {
        return Err(Error::InsufficientData("empty lambda grid".into()));
    }
    let mut c = 0.0_f64;
    for &lam in lambda_grid {
        let n = effective_dimension(eigenvalues, lam)?.value;
        c = c.max(n * lam.powf(1.0 / b));
    }
    Ok(c)
}

/// Effective dimension with the decay bound `C lambda^{-1/b}` filled in.
pub fn effective_dimension_with_bound(
    eigenvalues: &[f64],
    lambda: f64,
    b: f64,
    c: f64,
) -> Result<EffDim> {
    let mut e = effective_dimension(eigenvalues, lambda)?;
    e.decay_bound = Some(c * lambda.powf(-1.0 / b));
    Ok(e)
}

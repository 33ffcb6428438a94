//! Non-linear forward operators with analytic Fréchet derivatives, their
//! sampled and population linearizations, and Taylor-remainder
//! diagnostics.
//!
//! Three kinds are provided: the identity, the linear integral operator
//! `f -> int theta(x, s) f(s) ds`, and the quadratic integral operator
//! `f -> int theta(x, s) f(s)^2 ds`. The integral kernel `theta` is either
//! a callable (evaluable anywhere, quadrature over the grid in `s`) or a
//! dense matrix sampled on the grid (off-node evaluation then goes through
//! the H2 interpolant of the node image).

use alloc::sync::Arc;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hilbert::{sampling_apply, Space};

/// Integral kernel of the non-identity operators.
#[derive(Clone)]
pub enum Theta {
    /// `theta(x, s)` as a function; evaluable at arbitrary `x`.
    Callable(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
    /// `theta` sampled on the grid: `M[i, j] = theta(node_i, node_j)`.
    Matrix(DMatrix<f64>),
}

impl core::fmt::Debug for Theta {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Theta::Callable(_) => f.write_str("Theta::Callable(..)"),
            Theta::Matrix(m) => write!(f, "Theta::Matrix({}x{})", m.nrows(), m.ncols()),
        }
    }
}

impl Theta {
    /// Gaussian bump `amplitude * exp(-(x-s)^2 / (2 tau^2))`, the default
    /// smooth test kernel.
    pub fn gaussian(amplitude: f64, tau: f64) -> Theta {
        Theta::Callable(Arc::new(move |x: f64, s: f64| {
            let d = x - s;
            amplitude * (-d * d / (2.0 * tau * tau)).exp()
        }))
    }

    /// Matrix kernel acting as the pointwise map `A(f) = amplitude * f^2`
    /// (or `amplitude * f` for the linear kind): a Dirac row per node,
    /// `theta(node_i, s_j) = amplitude * delta_ij / w_j`.
    pub fn pointwise(amplitude: f64, weights: &[f64]) -> Theta {
        let n = weights.len();
        let mut m = DMatrix::zeros(n, n);
        for (j, &w) in weights.iter().enumerate() {
            m[(j, j)] = amplitude / w;
        }
        Theta::Matrix(m)
    }
}

/// Operator kind; see the module docs.
#[derive(Debug, Clone)]
pub enum OpKind {
    Identity,
    LinearIntegral(Theta),
    QuadraticIntegral(Theta),
}

/// A forward operator `A: H1 -> H2` bound to a grid via [`Space`] at call
/// time, with optional certified constants.
#[derive(Debug, Clone)]
pub struct ForwardOp {
    pub kind: OpKind,
    /// Bound on the Fréchet derivative over the working ball, when known.
    pub lipschitz: Option<f64>,
    /// Taylor-remainder constant of the linearization bound.
    pub nonlinearity_gamma: Option<f64>,
    /// Radius of the working ball around the base point.
    pub ball_radius: Option<f64>,
}

impl ForwardOp {
    pub fn new(kind: OpKind) -> Self {
        ForwardOp {
            kind,
            lipschitz: None,
            nonlinearity_gamma: None,
            ball_radius: None,
        }
    }

    pub fn identity() -> Self {
        ForwardOp::new(OpKind::Identity)
    }

    pub fn linear_integral(theta: Theta) -> Self {
        ForwardOp::new(OpKind::LinearIntegral(theta))
    }

    pub fn quadratic_integral(theta: Theta) -> Self {
        ForwardOp::new(OpKind::QuadraticIntegral(theta))
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, OpKind::Identity | OpKind::LinearIntegral(_))
    }

    fn check_f(&self, space: &Space, f: &DVector<f64>) -> Result<()> {
        if f.len() != space.len() {
            return Err(Error::shape(alloc::format!(
                "function of length {} on a grid of {} nodes",
                f.len(),
                space.len()
            )));
        }
        if let OpKind::LinearIntegral(Theta::Matrix(m))
        | OpKind::QuadraticIntegral(Theta::Matrix(m)) = &self.kind
        {
            if m.ncols() != space.len() || m.nrows() != space.len() {
                return Err(Error::shape(alloc::format!(
                    "theta matrix is {}x{} on a grid of {} nodes",
                    m.nrows(),
                    m.ncols(),
                    space.len()
                )));
            }
        }
        Ok(())
    }

    /// `A(f)` at the grid nodes.
    pub fn apply_nodes(&self, space: &Space, f: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_f(space, f)?;
        let grid = space.grid();
        let w = grid.weights();
        match &self.kind {
            OpKind::Identity => Ok(f.clone()),
            OpKind::LinearIntegral(theta) => match theta {
                Theta::Matrix(m) => {
                    let fw = DVector::from_iterator(
                        f.len(),
                        f.iter().zip(w.iter()).map(|(v, wi)| v * wi),
                    );
                    Ok(m * fw)
                }
                Theta::Callable(t) => {
                    Ok(integral_rows(&**t, grid.nodes(), grid.nodes(), w, f, |v| v))
                }
            },
            OpKind::QuadraticIntegral(theta) => match theta {
                Theta::Matrix(m) => {
                    let fw = DVector::from_iterator(
                        f.len(),
                        f.iter().zip(w.iter()).map(|(v, wi)| v * v * wi),
                    );
                    Ok(m * fw)
                }
                Theta::Callable(t) => {
                    Ok(integral_rows(&**t, grid.nodes(), grid.nodes(), w, f, |v| {
                        v * v
                    }))
                }
            },
        }
    }

    /// `A(f)` at arbitrary evaluation points in the domain.
    pub fn apply(&self, space: &Space, f: &DVector<f64>, points: &[f64]) -> Result<DVector<f64>> {
        self.check_f(space, f)?;
        let grid = space.grid();
        let w = grid.weights();
        match &self.kind {
            OpKind::Identity => sampling_apply(space.basis(), f, points),
            OpKind::LinearIntegral(Theta::Callable(t)) => {
                check_points(space, points)?;
                Ok(integral_rows(&**t, points, grid.nodes(), w, f, |v| v))
            }
            OpKind::QuadraticIntegral(Theta::Callable(t)) => {
                check_points(space, points)?;
                Ok(integral_rows(&**t, points, grid.nodes(), w, f, |v| v * v))
            }
            OpKind::LinearIntegral(Theta::Matrix(_))
            | OpKind::QuadraticIntegral(Theta::Matrix(_)) => {
                let nodes = self.apply_nodes(space, f)?;
                sampling_apply(space.basis(), &nodes, points)
            }
        }
    }

    /// Directional Fréchet derivative `[A'(f) g]` at the evaluation points.
    pub fn deriv(
        &self,
        space: &Space,
        f: &DVector<f64>,
        g: &DVector<f64>,
        points: &[f64],
    ) -> Result<DVector<f64>> {
        if g.len() != f.len() {
            return Err(Error::shape("deriv: f and g on different grids"));
        }
        match &self.kind {
            OpKind::Identity => sampling_apply(space.basis(), g, points),
            OpKind::LinearIntegral(_) => self.apply(space, g, points),
            OpKind::QuadraticIntegral(_) => {
                self.check_f(space, f)?;
                let jac = self.jacobian(space, f, points)?;
                Ok(jac * g)
            }
        }
    }

    /// Jacobian of `f -> A(f)(points)` with respect to the node values,
    /// `J[i, j] = d A(f)(x_i) / d f_j`.
    pub fn jacobian(
        &self,
        space: &Space,
        f: &DVector<f64>,
        points: &[f64],
    ) -> Result<DMatrix<f64>> {
        self.check_f(space, f)?;
        let grid = space.grid();
        let w = grid.weights();
        match &self.kind {
            OpKind::Identity => space.basis().eval_matrix(points),
            OpKind::LinearIntegral(Theta::Callable(t)) => {
                check_points(space, points)?;
                Ok(jacobian_rows(&**t, points, grid.nodes(), w, f, |_| 1.0))
            }
            OpKind::QuadraticIntegral(Theta::Callable(t)) => {
                check_points(space, points)?;
                Ok(jacobian_rows(&**t, points, grid.nodes(), w, f, |v| 2.0 * v))
            }
            OpKind::LinearIntegral(Theta::Matrix(m)) => {
                let jn = scale_columns(m, w, f, |_| 1.0);
                Ok(space.basis().eval_matrix(points)? * jn)
            }
            OpKind::QuadraticIntegral(Theta::Matrix(m)) => {
                let jn = scale_columns(m, w, f, |v| 2.0 * v);
                Ok(space.basis().eval_matrix(points)? * jn)
            }
        }
    }

    /// Jacobian at the grid nodes (rows of the population linearization).
    pub fn jacobian_nodes(&self, space: &Space, f: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_f(space, f)?;
        let grid = space.grid();
        let w = grid.weights();
        match &self.kind {
            OpKind::Identity => Ok(DMatrix::identity(space.len(), space.len())),
            OpKind::LinearIntegral(Theta::Callable(t)) => Ok(jacobian_rows(
                &**t,
                grid.nodes(),
                grid.nodes(),
                w,
                f,
                |_| 1.0,
            )),
            OpKind::QuadraticIntegral(Theta::Callable(t)) => {
                Ok(jacobian_rows(&**t, grid.nodes(), grid.nodes(), w, f, |v| {
                    2.0 * v
                }))
            }
            OpKind::LinearIntegral(Theta::Matrix(m)) => Ok(scale_columns(m, w, f, |_| 1.0)),
            OpKind::QuadraticIntegral(Theta::Matrix(m)) => Ok(scale_columns(m, w, f, |v| 2.0 * v)),
        }
    }

    /// Folded matrix of the population covariance `T = B*B` of the
    /// linearization `B = I_K A'(f0)` at `f0`; symmetric PSD, with
    /// eigenvalues the squared singular values of `B`.
    pub fn population_t(&self, space: &Space, f0: &DVector<f64>) -> Result<DMatrix<f64>> {
        let b = self.population_b_folded(space, f0)?;
        Ok(b.transpose() * b)
    }

    /// Folded population linearization `B`: rows are `A'(f0)` at the grid
    /// nodes scaled by the square-root probability weights, columns act on
    /// folded H1 coordinates.
    pub fn population_b_folded(&self, space: &Space, f0: &DVector<f64>) -> Result<DMatrix<f64>> {
        let jn = self.jacobian_nodes(space, f0)?;
        let mut b = space.unfold_right(&jn);
        for (i, p) in space.grid().prob_weights().iter().enumerate() {
            b.row_mut(i).scale_mut(p.sqrt());
        }
        Ok(b)
    }

    /// Norm of the linearization remainder
    /// `A(f) - A(f0) - A'(f0)(f - f0)` in `L^2(rho_X)`, by quadrature.
    pub fn taylor_remainder(
        &self,
        space: &Space,
        f: &DVector<f64>,
        f0: &DVector<f64>,
    ) -> Result<f64> {
        if f.len() != f0.len() {
            return Err(Error::shape(
                "taylor_remainder: f and f0 on different grids",
            ));
        }
        let af = self.apply_nodes(space, f)?;
        let af0 = self.apply_nodes(space, f0)?;
        let step = f - f0;
        let lin = self.jacobian_nodes(space, f0)? * step;
        let rem = af - af0 - lin;
        Ok(space.grid().l2_norm(&rem))
    }

    /// Empirical upper bound for the Taylor-remainder constant: the max of
    /// `2 rem / ||f - f0||^2` over the probes, inflated by 1.2.
    pub fn estimate_gamma(
        &self,
        space: &Space,
        f0: &DVector<f64>,
        probes: &[DVector<f64>],
    ) -> Result<f64> {
        if probes.is_empty() {
            return Err(Error::InsufficientData(
                "estimate_gamma needs probes".into(),
            ));
        }
        let mut gamma: f64 = 0.0;
        for f in probes {
            let d = space.h1_norm(&(f - f0))?;
            if d == 0.0 {
                continue;
            }
            let rem = self.taylor_remainder(space, f, f0)?;
            gamma = gamma.max(2.0 * rem / (d * d));
        }
        Ok(gamma * 1.2)
    }

    /// Estimate `||A'(f0)||_{H1 -> H2}`: the top singular value of the
    /// folded derivative measured in the RKHS norm of the image.
    pub fn operator_norm(&self, space: &Space, f0: &DVector<f64>) -> Result<f64> {
        let jn = self.jacobian_nodes(space, f0)?;
        let folded_in = space.unfold_right(&jn);
        let m = space
            .basis()
            .gram_eig()
            .spectral_fn(|t| if t > 0.0 { 1.0 / t.sqrt() } else { 0.0 })
            * folded_in;
        let sq = m.transpose() * &m;
        Ok(crate::linalg::sym_operator_norm(&sq)?.sqrt())
    }
}

/// Sampled and population linearizations of `A` at a base point, in folded
/// coordinates throughout.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    /// Sampled rows `A'(f0)` at the design points, acting on folded H1
    /// coordinates.
    pub b_sampled: DMatrix<f64>,
    /// `T_x = B_x^T B_x / m` under the `1/m`-weighted product; PSD.
    pub t_sampled: DMatrix<f64>,
    /// Population rows at the grid nodes, probability weights folded in.
    pub b_population: DMatrix<f64>,
    /// `T = B^T B`; PSD, the covariance of the population linearization.
    pub t_population: DMatrix<f64>,
    /// Base point (node values).
    pub base_point: DVector<f64>,
}

/// Assemble both linearizations at `f0`.
pub fn linearize(
    op: &ForwardOp,
    space: &Space,
    f0: &DVector<f64>,
    design_points: &[f64],
) -> Result<LinearizedSystem> {
    if design_points.is_empty() {
        return Err(Error::invalid("linearize needs at least one design point"));
    }
    let m = design_points.len() as f64;
    let jac = op.jacobian(space, f0, design_points)?;
    let b_sampled = space.unfold_right(&jac);
    let t_sampled = b_sampled.transpose() * &b_sampled / m;
    let b_population = op.population_b_folded(space, f0)?;
    let t_population = b_population.transpose() * &b_population;
    Ok(LinearizedSystem {
        b_sampled,
        t_sampled,
        b_population,
        t_population,
        base_point: f0.clone(),
    })
}

fn check_points(space: &Space, points: &[f64]) -> Result<()> {
    let (a, b) = space.grid().domain();
    for &x in points {
        if !(x >= a && x <= b) {
            return Err(Error::OutOfDomain { x, lo: a, hi: b });
        }
    }
    Ok(())
}

/// Rows `sum_j theta(x_i, s_j) nl(f_j) w_j` for a callable kernel.
fn integral_rows(
    theta: &(dyn Fn(f64, f64) -> f64 + Send + Sync),
    points: &[f64],
    nodes: &[f64],
    weights: &[f64],
    f: &DVector<f64>,
    nl: impl Fn(f64) -> f64,
) -> DVector<f64> {
    let mut out = DVector::zeros(points.len());
    for (i, &x) in points.iter().enumerate() {
        let mut acc = 0.0;
        for (j, &s) in nodes.iter().enumerate() {
            acc += theta(x, s) * nl(f[j]) * weights[j];
        }
        out[i] = acc;
    }
    out
}

/// Jacobian rows `theta(x_i, s_j) dnl(f_j) w_j` for a callable kernel.
fn jacobian_rows(
    theta: &(dyn Fn(f64, f64) -> f64 + Send + Sync),
    points: &[f64],
    nodes: &[f64],
    weights: &[f64],
    f: &DVector<f64>,
    dnl: impl Fn(f64) -> f64,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(points.len(), nodes.len());
    for (i, &x) in points.iter().enumerate() {
        for (j, &s) in nodes.iter().enumerate() {
            out[(i, j)] = theta(x, s) * dnl(f[j]) * weights[j];
        }
    }
    out
}

/// `M[i, j] * dnl(f_j) * w_j` for a matrix kernel.
fn scale_columns(
    m: &DMatrix<f64>,
    weights: &[f64],
    f: &DVector<f64>,
    dnl: impl Fn(f64) -> f64,
) -> DMatrix<f64> {
    let mut out = m.clone();
    for j in 0..out.ncols() {
        out.column_mut(j).scale_mut(dnl(f[j]) * weights[j]);
    }
    out
}

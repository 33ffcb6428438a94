//! Crate-wide error type.

use alloc::string::String;

/// Errors surfaced by the numerical routines.
///
/// Solver non-convergence is deliberately *not* an error: the solver
/// returns its diagnostics in [`crate::tikhonov::TikhonovFit`] instead.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("point {x} outside domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },

    #[error("duplicate grid nodes at indices {i} and {j}")]
    DuplicateNodes { i: usize, j: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("construction failed: {0}")]
    ConstructionFailure(String),

    #[error("sign packing failed after {draws} draws (need {target} vectors, kept {kept})")]
    PackingFailure {
        draws: usize,
        target: usize,
        kept: usize,
    },

    #[error("hard instance weight negative at x = {x}: {value}")]
    NegativeWeight { x: f64, value: f64 },

    #[error("hard instance has zero forward image (J = 0)")]
    ZeroImage,

    #[error("Kullback-Leibler divergence infinite: q vanishes where p > 0")]
    InfiniteKl,
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl core::fmt::Display) -> Self {
        Error::ShapeMismatch(alloc::format!("{msg}"))
    }

    pub(crate) fn invalid(msg: impl core::fmt::Display) -> Self {
        Error::InvalidArgument(alloc::format!("{msg}"))
    }
}

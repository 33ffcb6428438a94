//! Regularized least-squares estimation for non-linear inverse learning
//! problems posed in reproducing kernel Hilbert spaces.
//!
//! The crate discretizes a 1-D learning problem `y_i = A(f)(x_i) + eps_i`
//! on a quadrature grid and provides:
//!
//! * scalar kernels, Gram matrices and eigenvalue-decay estimation
//!   ([`kernels`]),
//! * the discretized Hilbert spaces, sampling operator and effective
//!   dimension ([`hilbert`]),
//! * non-linear forward operators with analytic Fréchet derivatives and
//!   their linearizations ([`operators`]),
//! * a damped Gauss–Newton Tikhonov solver with a-priori parameter-choice
//!   rules ([`tikhonov`]),
//! * data simulation, source-condition truth construction, Monte Carlo
//!   rate studies and concentration-bound checks ([`experiments`]),
//! * the hard-instance family behind the minimax lower bound
//!   ([`lowerbound`]).
//!
//! The crate is `no_std` (with `alloc`); all functions are pure and safe
//! to call concurrently. IO, configuration files and the command-line
//! front end live in the companion `invlearn-cli` crate.

#![no_std]
#![deny(unsafe_code)]
// validation guards are written `!(x > 0.0)` so NaN fails them too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod experiments;
pub mod hilbert;
pub mod kernels;
pub mod linalg;
pub mod lowerbound;
pub mod operators;
pub mod tikhonov;

pub use error::{Error, Result};

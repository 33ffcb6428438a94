//! Library side of the command-line front end: configuration schemas,
//! file formats, and the command implementations. The binary in
//! `main.rs` is a thin argument-parsing shell over [`commands`].

// validation guards are written `!(x > 0.0)` so NaN fails them too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::{CliError, Result};

//! Relative spectral invariants of operator pairs at matrix scale: relative
//! heat traces, Duhamel differences, small-time expansions, relative zeta
//! functions, determinants, indices and torsion.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod duhamel;
pub mod error;
pub mod heat;
pub mod hodge;
pub mod krylov;
pub mod linalg;
pub mod model;
pub mod operator;
pub mod quadrature;
pub mod special;
pub mod zeta;

pub use error::{Error, Result};

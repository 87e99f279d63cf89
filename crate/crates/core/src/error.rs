use thiserror::Error;

/// Errors raised by operator construction and the spectral pipelines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid complex: {0}")]
    InvalidComplex(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unsupported: {0}")]
    Capability(String),

    #[error("zeta function has a pole at s = {location} (residue {residue:.6e})")]
    Pole { location: f64, residue: f64 },

    #[error("heat trace tail not converged: |F(T) - h| = {deviation:.3e} at T = {t_max}")]
    TailNotConverged { t_max: f64, deviation: f64 },

    #[error("degenerate spectrum: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

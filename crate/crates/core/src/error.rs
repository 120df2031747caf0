//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice too small: n = {0}, need n >= 3 (J vanishes identically on n = 2)")]
    LatticeTooSmall(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("input not mean-zero: |mean| = {mean_abs:.3e} exceeds tolerance {tol:.3e}")]
    NotMeanZero { mean_abs: f64, tol: f64 },

    #[error("invalid block scheme: n = {n}, m = {m} (need n = k*m with m >= 3, k >= 1)")]
    InvalidScheme { n: usize, m: usize },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("grid under-resolution: mass defect {defect:.3e} exceeds {tol:.3e}")]
    MassLoss { defect: f64, tol: f64 },

    #[error("value {value} outside table interval [{lo}, {hi}]")]
    OutOfTableRange { value: f64, lo: f64, hi: f64 },

    #[error("numerical abort: {0}")]
    NumericalAbort(String),

    #[error("sampler diagnostics failure: {0}")]
    Sampler(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("constants inconsistent: {0}")]
    Constants(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code bucket: 1 identity failure, 2 config, 3 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 2,
            Error::NumericalAbort(_)
            | Error::Quadrature(_)
            | Error::RootFinding(_)
            | Error::MassLoss { .. }
            | Error::Factorization(_)
            | Error::Sampler(_) => 3,
            _ => 1,
        }
    }
}

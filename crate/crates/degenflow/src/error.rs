//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument ranges (negative components, t <= 0, bad spacing, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Parameters outside the exponent ranges the estimates require.
    #[error("regime error: {0}")]
    Regime(String),

    /// Malformed or inconsistent experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A structure condition (A2)-(A7) failed validation.
    #[error("structure validation failed: {0}")]
    Structure(String),

    /// The explicit update produced a non-finite value.
    #[error("numerical blowup in component {component} at cell {cell:?}, t = {t}")]
    Blowup {
        component: usize,
        cell: Vec<usize>,
        t: f64,
    },

    /// A diagnostic region does not fit in the grid or trajectory.
    #[error("clipping error: {0}")]
    Clipping(String),

    /// Snapshot / trajectory / config file could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: config errors 2, structure failures 3,
    /// numerical blowup 4, everything else 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format(_) => 2,
            Error::Structure(_) | Error::Regime(_) => 3,
            Error::Blowup { .. } => 4,
            _ => 1,
        }
    }
}

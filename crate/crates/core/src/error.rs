use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// `L·Δ` is too small relative to `ε` for even one chain link.
    #[error("T_ZERO: chain length would be zero (L*Delta/eps = {ratio:.4e})")]
    TZero { ratio: f64 },

    #[error("DIM_TOO_SMALL: ambient dimension {d} is below chain length {t}")]
    DimTooSmall { d: usize, t: usize },

    #[error("NONPOSITIVE_NUMERATOR: threshold numerator {0} is not positive")]
    NonpositiveNumerator(f64),

    #[error("guard violated: {0}")]
    Guard(String),

    #[error("ZERO_RESPECT_VIOLATION: {0}")]
    ZeroRespectViolation(crate::simulator::Violation),

    #[error("protocol violation: {0}")]
    Protocol(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

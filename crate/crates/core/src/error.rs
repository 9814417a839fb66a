use thiserror::Error;

/// Errors raised by the analysis, optimization and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error(
        "{what} did not converge within {iterations} iterations (last relative step {last_step:e})"
    )]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last_step: f64,
    },

    #[error("pilot length L={pilot_len} must exceed the active-user count K={active}")]
    PilotTooShort { pilot_len: u32, active: usize },

    #[error("pilot length L={pilot_len} is shorter than the active-user count K={active}; orthogonal pilots need L >= K")]
    OrthogonalPilotTooShort { pilot_len: u32, active: usize },

    #[error("{active} active users requested but only {total} devices exist")]
    TooManyActive { active: usize, total: u32 },

    #[error("fixed-point map is not monotone near x={at:e} (f={value:e} after {previous:e})")]
    NotMonotone { at: f64, value: f64, previous: f64 },

    #[error("sum-rate profile is not strictly decreasing: J={j} gives {value} >= {previous} at J={prev_j}")]
    MonotonicityViolation {
        j: u32,
        value: f64,
        prev_j: u32,
        previous: f64,
    },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

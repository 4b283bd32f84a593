use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("overlap matrix truncated: column {column} misses {deficit:e} of its norm at N = {size}")]
    Truncation {
        column: usize,
        deficit: f64,
        size: usize,
    },

    #[error("motional basis too small: {tail:e} of the population sits in the top 10% of {size} states")]
    BasisTooSmall { tail: f64, size: usize },

    #[error("curve never crosses P2 = {threshold} within its span")]
    NoCrossing { threshold: f64 },

    #[error("slope window holds {points} points, at least 4 are required")]
    DegenerateWindow { points: usize },

    #[error("limiting-rate fit needs at least 4 distinct pulse counts, got {distinct}")]
    Underdetermined { distinct: usize },

    #[error("limiting-rate fit did not converge: {reason}")]
    FitDiverged { reason: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

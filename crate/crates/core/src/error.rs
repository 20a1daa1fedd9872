use thiserror::Error;

/// Errors raised by the solver, value and strategy layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("Mittag-Leffler series for alpha={alpha}, z={z} did not converge within {terms} terms")]
    SeriesNonConvergence { alpha: f64, z: f64, terms: usize },

    #[error("Mittag-Leffler series for alpha={alpha}, z={z} lost all precision (largest term {largest:e}, sum {sum:e})")]
    SeriesCancellation {
        alpha: f64,
        z: f64,
        largest: f64,
        sum: f64,
    },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("index {index} out of range (valid: {valid})")]
    IndexOutOfRange { index: usize, valid: String },

    #[error("positions live on different grids or free terms")]
    GridMismatch,

    #[error("Picard iteration did not converge at node {node} (tau={tau}) after {iterations} iterations")]
    PicardNonConvergence {
        node: usize,
        tau: f64,
        iterations: usize,
    },

    #[error("dynamics returned a non-finite value at node {node} (tau={tau})")]
    NonFinite { node: usize, tau: f64 },

    #[error("node budget of {budget} expansions exceeded after {expanded} expansions")]
    BudgetExceeded { budget: usize, expanded: usize },

    #[error("position at t_index={t_index} is not in G_{k}")]
    NotInGk { t_index: usize, k: u32 },

    #[error("partition is invalid: {0}")]
    InvalidPartition(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}

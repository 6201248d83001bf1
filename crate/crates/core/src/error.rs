use thiserror::Error;

use crate::solver::FactorPair;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid shape {rows}x{cols} for {len} entries")]
    InvalidShape { rows: usize, cols: usize, len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("column {0} has zero norm")]
    DegenerateColumn(usize),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("mu-coherence is undefined for a matrix with {0} column(s)")]
    UndefinedCoherence(usize),

    #[error("row sparsity {k} is not in 1..={n}")]
    Sparsity { k: usize, n: usize },

    #[error("SNR is undefined when the noiseless signal is identically zero")]
    UndefinedSnr,

    #[error("relative error is undefined for an all-zero ground truth")]
    UndefinedMetric,

    /// The multiplicative dynamics blew up. Carries the last iterate whose
    /// entries were all finite.
    #[error("non-finite iterate at iteration {iteration}")]
    Divergence {
        iteration: usize,
        last_finite: Box<FactorPair>,
    },

    #[error("every row was pruned before convergence (iteration {0})")]
    DegenerateSolution(usize),

    #[error("construction violated: {0}")]
    ConstructionViolation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

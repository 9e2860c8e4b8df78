//! Crate-wide error type.

use crate::glm::GlmFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed matrix file. `row`/`col` are 1-based positions in the file,
    /// counting any header row.
    #[error("{path}:{row}:{col}: {message}")]
    Parse {
        path: String,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("cell {index} has zero total count; size factors are undefined")]
    DegenerateCell { index: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("epsilon must lie strictly between 0 and 1, got {value}")]
    InvalidEpsilon { value: f64 },

    #[error("fraction {value} cannot split {n} cells into two non-empty groups")]
    InvalidFraction { value: f64, n: usize },

    #[error("gene splitting needs at least 2 genes, got {p}")]
    TooFewGenes { p: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("fitted means under- or overflowed; the data are separated or degenerate")]
    SeparationDetected,

    /// Dispersion ran off to the Poisson limit. The capped fit is carried so
    /// callers can still use its (effectively Poisson) coefficients.
    #[error("dispersion estimate reached the cap {cap:e}; the data are effectively Poisson")]
    ThetaDiverged { cap: f64, fit: Box<GlmFit> },

    #[error("fit did not converge; Wald inference is unavailable")]
    UnconvergedFit,

    #[error("matrix has no non-constant column")]
    DegenerateMatrix,

    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },

    #[error("correlation is undefined for constant input")]
    ConstantInput,

    #[error("clustering produced a cluster with fewer than 2 members")]
    DegenerateClusters,
}

impl Error {
    /// CLI exit code: 2 config, 3 I/O, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Parse { .. } => 3,
            Error::InvalidEpsilon { .. }
            | Error::InvalidFraction { .. }
            | Error::TooFewGenes { .. }
            | Error::InvalidConfig(_)
            | Error::DimensionMismatch(_) => 2,
            _ => 4,
        }
    }
}

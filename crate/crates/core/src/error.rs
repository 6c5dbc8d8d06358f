//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column '{0}' not found in data")]
    MissingColumn(String),

    #[error("probit outcome must be 0 or 1, found {value} at row {row}")]
    NonBinaryOutcome { row: usize, value: f64 },

    #[error("at least one clustering covariate (continuous or categorical) is required")]
    EmptyClusteringBlock,

    #[error("random-effect covariates declared without a re_unit column")]
    DanglingRandomEffect,

    #[error("non-finite or unparseable value at row {row}, column '{col}'")]
    NonFiniteValue { row: usize, col: String },

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("inverse-Wishart degrees of freedom {dof} below dimension {dim}")]
    DofTooSmall { dof: f64, dim: usize },

    #[error("Dirichlet concentration parameters must all be positive")]
    NonPositiveAlpha,

    #[error("categorical weights are all zero")]
    AllZeroWeights,

    #[error("rank-deficient conditional precision in block {0}")]
    RankDeficientBlock(String),

    #[error("eigensolver failed to converge")]
    EigSolverFailure,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown category '{value}' in column '{col}' (unseen in training data)")]
    UnknownCategory { col: String, value: String },

    #[error("representative cluster {0} is empty")]
    EmptyRepresentativeCluster(usize),

    #[error("chain aborted at iteration {iteration}: {source}")]
    ChainAborted {
        iteration: usize,
        source: Box<Error>,
    },

    #[error("stored state failed validation at iteration {iteration}: {violations:?}")]
    InvalidState {
        iteration: usize,
        violations: Vec<String>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("chain file is corrupt or has an unsupported layout: {0}")]
    InvalidChainFile(String),

    #[error("artifact fingerprint mismatch: {0}")]
    FingerprintMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

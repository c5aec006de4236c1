//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised while loading or assembling datasets.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad header: expected column `{expected}` at position {position}, found `{found}`")]
    BadHeader {
        expected: String,
        found: String,
        position: usize,
    },
    #[error("row {row}, column `{column}`: {reason}")]
    BadCell {
        row: usize,
        column: String,
        reason: String,
    },
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("blood glucose must be positive, got {0}")]
    NonPositiveBg(f64),
    #[error("insufficient data for user `{user}`: {count} meals, {required} required")]
    InsufficientData {
        user: String,
        count: usize,
        required: usize,
    },
    #[error("dataset invariant violated: {0}")]
    Invalid(String),
    #[error("invalid synthetic config: {0}")]
    BadSynthConfig(String),
}

/// Errors raised while constructing assignment matrices.
#[derive(Debug, Error)]
pub enum AssignError {
    #[error("label `{0}` not found in category levels")]
    UnknownLabel(String),
    #[error("grid nodes must be strictly increasing")]
    NonIncreasingNodes,
    #[error("cannot build a grid: all values missing")]
    AllMissing,
    #[error("need at least 2 grid nodes, got {0}")]
    TooFewNodes(usize),
    #[error("requested {requested} prototypes from {available} points")]
    TooManyPrototypes { requested: usize, available: usize },
    #[error("iteration budget must be at least 1")]
    ZeroBudget,
    #[error("prototype points must share one dimension and be non-empty")]
    BadPoints,
}

/// Errors raised while fitting or evaluating models.
#[derive(Debug, Error)]
pub enum FitError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("response vector contains a non-finite value at index {0}")]
    NonFiniteResponse(usize),
    #[error("model has no covariates")]
    NoCovariates,
    #[error("empty dataset")]
    EmptyData,
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("invalid fit config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Assign(#[from] AssignError),
}

/// Errors raised by the bootstrap machinery.
#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error("cannot resample an empty dataset")]
    EmptyParent,
    #[error("confidence level must lie strictly between 0 and 1, got {0}")]
    BadLevel(f64),
    #[error("invalid bootstrap config: {0}")]
    BadConfig(String),
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("all {0} replicas failed")]
    AllReplicasFailed(usize),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Errors raised by evaluation metrics and range extraction.
#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("missing marginal curve for covariate `{0}`")]
    MissingCurve(String),
    #[error("need a single-covariate curve over a real axis")]
    NotARealCurve,
    #[error("need at least {required} evaluation points, got {got}")]
    TooFewPoints { required: usize, got: usize },
    #[error("empty curve")]
    EmptyCurve,
}

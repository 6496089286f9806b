//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // dataset ingestion
    #[error("required column `{0}` is missing")]
    MissingColumn(String),
    #[error("non-numeric cell at row {row}, column `{col}`")]
    NonNumericCell { row: usize, col: String },
    #[error("inconsistent feature dimensions: expected {expected}, found {found} at row {row}")]
    InconsistentDimensions {
        expected: usize,
        found: usize,
        row: usize,
    },
    #[error("task `{0}` has fewer than 2 samples")]
    TaskTooSmall(String),
    #[error("input file has no data rows")]
    EmptyFile,
    #[error("invalid task set: {0}")]
    InvalidTaskSet(String),
    #[error("too few samples to split: {n} rows with minimum fraction {min_frac}")]
    TooFewSamples { n: usize, min_frac: f64 },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    // network engine
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("training diverged: validation loss became non-finite at step {step}")]
    NumericalDivergence { step: usize },
    #[error("AUC undefined: labels contain a single class")]
    DegenerateLabels,

    // single-task features
    #[error("learning curve has no checkpoint at fraction {0}")]
    MissingCheckpoint(f64),
    #[error("log-curve fit is degenerate: {0}")]
    DegenerateFit(String),

    // multi-task engine
    #[error("MTL group needs at least 2 tasks, got {0}")]
    GroupTooSmall(usize),
    #[error("sum of STL losses is zero; relative gain undefined")]
    ZeroStlSum,

    // feature extraction
    #[error("Hamming distance requires binary features")]
    NonBinaryForHamming,
    #[error("missing pairwise gain for pair ({0}, {1})")]
    MissingPairGain(String, String),
    #[error("zero variance in `{0}`")]
    ZeroVariance(String),

    // predictor
    #[error("predictor needs at least {min} records, got {got}")]
    TooFewRecords { min: usize, got: usize },
    #[error("group features are missing `{0}` required by the model")]
    MissingFeature(String),
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    // partition search
    #[error("argument out of range: {0}")]
    OutOfRange(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("all task vectors are identical; k-means is degenerate")]
    DegenerateVectors,

    // pipeline
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("stage `{stage}` requires `{artifact}` from a prior stage; run `{hint}` first")]
    MissingPrerequisiteStage {
        stage: String,
        artifact: String,
        hint: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

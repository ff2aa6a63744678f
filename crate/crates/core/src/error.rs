use thiserror::Error;

pub type Result<T> = std::result::Result<T, SurvError>;

#[derive(Debug, Error)]
pub enum SurvError {
    // ingestion and datasets
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-numeric value in row {row}, column `{column}`")]
    NonNumericValue { row: usize, column: String },
    #[error("invalid event flag in row {0} (expected 0 or 1)")]
    InvalidEventFlag(usize),
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("all observed times are equal; quantile discretization is degenerate")]
    DegenerateTimes,
    #[error("unknown counterexample table `{0}` (expected dcal, brier or rps)")]
    UnknownTableId(String),
    #[error("invalid rate: {0}")]
    InvalidRate(String),
    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),

    // estimators
    #[error("no records supplied")]
    EmptyInput,
    #[error("neither group contains an observed event")]
    NoEvents,
    #[error("reference survival is zero at t={0} while individuals remain at risk")]
    ZeroReferenceSurvival(usize),

    // model
    #[error("invalid model dimensions: {0}")]
    InvalidDims(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model artifact version mismatch: expected {expected}, found `{found}`")]
    VersionMismatch { expected: u32, found: String },
    #[error("corrupt model artifact: {0}")]
    CorruptArtifact(String),

    // losses / calibration
    #[error("degenerate denominator in D-Calibration mass")]
    DegenerateDenominator,
    #[error("curve length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("every timestep was skipped (no positive Greenwood variance)")]
    AllTimestepsSkipped,
    #[error("reference curve carries no variance")]
    MissingVariance,
    #[error("subgroup `{0}` has no members")]
    EmptySubgroup(String),

    // subgroups
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("dataset has no categorical features")]
    NoCategoricalFeatures,
    #[error("duplicate subgroup name `{0}`")]
    DuplicateName(String),
    #[error("subgroup file line {line}: {msg}")]
    SubgroupSyntax { line: usize, msg: String },

    // training
    #[error("subgroup `{0}` has no members in the training split")]
    EmptySubgroupOnTrain(String),
    #[error("non-finite loss at outer iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },
    #[error("invalid trainer configuration: {0}")]
    InvalidConfig(String),

    // metrics
    #[error("no comparable pairs for the concordance index")]
    NoComparablePairs,
    #[error("runs are misaligned: {0}")]
    MisalignedRuns(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Parse(String),
}

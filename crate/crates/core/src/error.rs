use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    // ingest
    #[error("missing or malformed header (expected `{expected}`)")]
    MissingHeader { expected: String },
    #[error("row {row}: cannot parse timestamp `{value}`")]
    BadTimestamp { row: usize, value: String },
    #[error("row {row}: timestamp is not aligned to a {step_secs} s grid")]
    MisalignedTimestamp { row: usize, step_secs: i64 },
    #[error("row {row}: timestamps are not increasing")]
    NonMonotoneTimestamps { row: usize },
    #[error("row {row}: duplicate timestamp")]
    DuplicateTimestamp { row: usize },
    #[error("row {row}, column `{column}`: cannot parse value `{value}`")]
    BadValue { row: usize, column: String, value: String },
    #[error("row {row}, column `{column}`: negative power {value}")]
    NegativePower { row: usize, column: String, value: f64 },
    #[error("row {row}, column `{column}`: non-finite value")]
    NonFinite { row: usize, column: String },
    #[error("load table has {rows} rows, at least 60 are required")]
    TooFewRows { rows: usize },
    #[error("invalid sampling step of {step_secs} s (must divide 3600)")]
    InvalidStep { step_secs: i64 },
    #[error("load and weather series overlap by less than one hour")]
    NoOverlap,
    #[error("no usable detection window remains after gap handling")]
    AllGaps,
    #[error("appliance `{0}` is not a column of the load table")]
    UnknownAppliance(String),
    #[error("column `{0}` not found")]
    UnknownColumn(String),
    #[error("activity `{0}` has no appliances")]
    EmptyActivity(String),
    #[error("appliance `{appliance}` is mapped to both `{first}` and `{second}`")]
    OverlappingActivity { appliance: String, first: String, second: String },
    #[error("invalid threshold {0} (must be finite and >= 0)")]
    InvalidThreshold(f64),
    #[error("series are not on the same time grid")]
    GridMismatch,

    // features
    #[error("window has {got} samples, expected {expected}")]
    WrongWindowLength { expected: usize, got: usize },
    #[error("requested {requested} spectrum bins from a {len}-sample window")]
    InvalidBins { requested: usize, len: usize },
    #[error("method M4 requires temperature for every window")]
    MissingTemperature,
    #[error("feature matrix is empty")]
    EmptyMatrix,
    #[error("feature matrix is already standardized")]
    AlreadyStandardized,
    #[error("window starting {0} has no ground-truth label")]
    UnlabeledWindow(String),

    // svm
    #[error("feature matrix has no scaler; standardize it before training")]
    NotStandardized,
    #[error("feature vector has {got} columns, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("malformed model file: {0}")]
    MalformedModelFile(String),

    // eval
    #[error("need at least {min} windows to split, got {got}")]
    TooFewWindows { min: usize, got: usize },
    #[error("split fractions must be non-negative and sum to 1")]
    InvalidFractions,
    #[error("label series do not share window timestamps")]
    TimestampMismatch,
    #[error("confusion counts are all zero")]
    EmptyCounts,

    // activity_model
    #[error("activity set is empty")]
    EmptyActivitySet,
    #[error("activity `{0}` appears twice in the state set")]
    DuplicateState(String),
    #[error("activity `{0}` is not in the state set")]
    UnknownState(String),
    #[error("no complete day of hourly windows")]
    NoCompleteDays,
    #[error("state sequence of length {0} is too short (need >= 2)")]
    SequenceTooShort(usize),
    #[error("invalid smoothing {0} (must be finite and >= 0)")]
    InvalidSmoothing(f64),
    #[error("state {0} has no observed transitions")]
    ZeroRow(usize),
    #[error("transition chain is reducible")]
    ReducibleChain,

    // synth
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error("cycle period must be at least 2 minutes, got {0}")]
    InvalidPeriod(usize),

    // pipeline
    #[error("unrecognized input file: {0}")]
    UnsupportedInput(String),
    #[error("no ground truth for `{0}`: the load has none of its appliance columns")]
    NoGroundTruth(String),
}

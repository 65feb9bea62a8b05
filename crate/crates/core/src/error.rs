use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    // taxonomy / dataset
    #[error("taxonomy has no leaves")]
    EmptyTaxonomy,
    #[error("duplicate code: {0}")]
    DuplicateCode(String),
    #[error("no formation derivable for leaf {0}")]
    UnmappableLeaf(String),
    #[error("dataset schema error: {0}")]
    SchemaError(String),
    #[error("unknown label {0:?} at row {1}")]
    UnknownLabel(String, usize),
    #[error("non-numeric feature {0:?} at row {1}")]
    NonNumericFeature(String, usize),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    // spatial cv
    #[error("block size must be positive, got {0}")]
    NonPositiveBlockSize(f64),
    #[error("need at least {need} blocks for {need} folds, have {have}")]
    TooFewBlocks { need: usize, have: usize },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    // losses
    #[error("class count is zero at index {0}")]
    ZeroCount(usize),
    #[error("non-finite logit at index {0}")]
    NonFiniteLogits(usize),

    // learners
    #[error("insufficient data: n={n} < K={k}")]
    InsufficientData { n: usize, k: usize },
    #[error("feature schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("empty hyperparameter search space")]
    EmptySearchSpace,

    // schemes
    #[error("modality mask selects no features")]
    EmptyMask,
    #[error("no training rows")]
    NoTrainingRows,
    #[error("operation requires a {expected} strategy, got {got}")]
    KindMismatch { expected: String, got: String },
    #[error("unknown formation {0}")]
    UnknownFormation(String),

    // ensemble
    #[error("probability table shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("ensemble has no members")]
    EmptyEnsemble,

    // metrics
    #[error("k={k} out of range [1, {kmax}]")]
    BadK { k: usize, kmax: usize },

    // stats
    #[error("degenerate score matrix: {0}")]
    DegenerateMatrix(String),
    #[error("unsupported number of treatments k={0} (supported 2..=10)")]
    UnsupportedK(usize),
    #[error("degenerate pairs: {0}")]
    DegeneratePairs(String),

    // attribution
    #[error("background sample set is empty")]
    EmptyBackground,

    // harness
    #[error("reports computed on mismatched folds: {0}")]
    MismatchedFolds(String),
    #[error("only one modality present, nothing to ablate")]
    SingleModality,
    #[error("{context}: {source}")]
    FoldContext {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps an error with fold/task context for harness reporting.
    pub fn with_context(self, context: impl Into<String>) -> Error {
        Error::FoldContext {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

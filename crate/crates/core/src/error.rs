use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not a probability law: {0}")]
    NotAProbability(String),

    #[error("offspring law is not critical: mean {mean} (expected 1)")]
    NotCritical { mean: f64 },

    #[error("offspring law has zero variance")]
    ZeroVariance,

    #[error("step law has nonzero mean {mean}")]
    NonzeroMean { mean: f64 },

    #[error("step law has span {span}, expected 1")]
    SpanNotOne { span: u64 },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    /// The tree grew past the vertex cap. `partial_total` vertices were
    /// visited and `pending_roots` unexplored vertices remained on the stack;
    /// each of those roots an independent copy of the offspring tree.
    #[error("tree exceeded vertex cap {cap} ({partial_total} visited, {pending_roots} pending)")]
    VertexCapExceeded { cap: u64, partial_total: u64, pending_roots: u64 },

    #[error("no tree of size {n} exists under this offspring law")]
    IncompatibleSize { n: u64 },

    #[error("size conditioning rejected {rounds} rounds in a row")]
    RejectionBudgetExceeded { rounds: u64 },

    #[error("ensemble needs at least one tree")]
    EmptyEnsemble,

    #[error("grid is not aligned with the 1/sqrt(N) lattice: {0}")]
    GridMisaligned(String),

    #[error("needs {needed} trees but only {available} are stored")]
    NotEnoughTrees { needed: u64, available: u64 },

    #[error("atom {atom} references missing ISE sample {ise_ref}")]
    MissingIseSample { atom: usize, ise_ref: usize },

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("sample {index} is not positive ({value})")]
    NonPositiveSample { index: usize, value: f64 },

    #[error("tail is degenerate: all top order statistics coincide")]
    DegenerateTail,

    #[error("sample is empty")]
    EmptySample,

    #[error("budget too small: {0}")]
    BudgetTooSmall(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

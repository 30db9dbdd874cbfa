use thiserror::Error;

/// Everything that can go wrong inside the engine proper. IO and parse
/// failures are wrapped so callers see a single error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("context budget overflow: {got} frame-equivalents exceeds window of {budget}")]
    BudgetOverflow { budget: usize, got: usize },

    #[error("calibration stats are frozen; cannot absorb further queries")]
    FrozenStats,

    #[error("operation requires calibration stats but none were collected")]
    NotCalibrated,

    #[error("direction undefined: zero-norm vector")]
    UndefinedDirection,

    #[error("unknown scene id {0}")]
    MissingScene(usize),

    #[error("routing requires at least one prior scene")]
    EmptyHistory,

    #[error("recall tag at block {block} needs at least two distinct scenes in history")]
    RecallUnavailable { block: usize },

    #[error("cannot attend over an empty context")]
    EmptyContext,

    #[error("frame {got} pushed after frame {last}: frame indices must be strictly increasing")]
    FrameOrdering { last: u64, got: u64 },

    #[error("bad transition tag {tag:?} at block {block}")]
    TagParse { tag: String, block: usize },

    #[error("scene script invalid: {0}")]
    Script(String),

    #[error("config invalid: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is out of range or internally inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A message or question carried empty (or whitespace-only) text.
    #[error("empty text in {0}")]
    EmptyText(&'static str),

    /// Turns must arrive with consecutive chunk ids.
    #[error("out-of-order chunk: expected {expected}, got {got}")]
    OutOfOrderChunk { expected: u64, got: u64 },

    /// Content kind not renderable for this role (e.g. video on the
    /// assistant side).
    #[error("{content} content cannot appear in a {role} message")]
    RoleMismatch {
        role: &'static str,
        content: &'static str,
    },

    /// An annotation violated a structural rule for its question type.
    #[error("annotation {qa_id}: {rule}")]
    AnnotationViolation { qa_id: String, rule: String },

    /// A timestamp points outside the annotated video.
    #[error("annotation {qa_id}: timestamp {t}s outside video of {duration_s}s")]
    TimestampOutOfRange {
        qa_id: String,
        t: f64,
        duration_s: f64,
    },

    /// Collision deferral ran past the last chunk of the video.
    #[error("annotation {qa_id}: event deferred past the end of the video ({total_chunks} chunks)")]
    DeferralOverflow { qa_id: String, total_chunks: u64 },

    /// Two schedule events landed on the same chunk and the same slot.
    #[error("schedule: two {kind} events land on chunk {chunk_id}")]
    ScheduleCollision { kind: &'static str, chunk_id: u64 },

    /// A schedule event points outside the session.
    #[error("schedule: {kind} at {t}s lies outside the {duration_s}s session")]
    ScheduleOutOfRange {
        kind: &'static str,
        t: f64,
        duration_s: f64,
    },

    /// A training sample failed its structural invariants.
    #[error("invalid training sample: {0}")]
    InvalidSample(String),

    /// The supervision mask selects zero tokens, so the loss is undefined.
    #[error("loss undefined: supervision mask selects zero tokens")]
    UndefinedLoss,

    /// A log-prob vector's length matches neither the masked nor the full
    /// target-token count of its sample.
    #[error("log-prob vector has {got} entries; expected {masked} (masked) or {total} (all target tokens)")]
    LogProbLength {
        got: usize,
        masked: usize,
        total: usize,
    },

    /// A log probability was positive, NaN, or infinite.
    #[error("invalid log-probability {value} at position {index}")]
    InvalidLogProb { index: usize, value: f64 },

    /// Refusing to serialize an empty metrics series.
    #[error("refusing to write an empty metrics series")]
    EmptyMetrics,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Attach a path to an I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a path to a JSON (de)serialization error.
    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

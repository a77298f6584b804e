//! Streaming-context machinery for a real-time video assistant.
//!
//! A live video feed is cut into fixed-duration chunks and rendered as a
//! chunk-wise chat: one user message (frames, plus any question asked during
//! the chunk) and one assistant message (an answer, an acknowledgment, or a
//! silent marker) per chunk. This crate implements everything downstream of
//! that framing:
//!
//! - [`context`] / [`tokens`]: the conversational layout and a deterministic
//!   synthetic tokenizer that makes prefix comparisons exact.
//! - [`window`]: dual sliding windows — N video chunks plus M evicted-history
//!   QA groups — with floating truncation that keeps the token prefix stable
//!   between batch drops.
//! - [`cache`]: prefix KV-cache accounting and a linear latency model.
//! - [`annotations`]: timestamped QA annotations merged onto the chunk grid
//!   and expanded into complete turn streams.
//! - [`samples`]: unrolling streams into anchored training samples and the
//!   silence-balanced loss.
//! - [`session`]: a deterministic session simulator comparing the full
//!   pipeline against unbounded-context and cache-cleared ablations, with
//!   CSV/JSON metrics export.

pub mod annotations;
pub mod cache;
pub mod context;
pub mod error;
pub mod samples;
pub mod session;
pub mod tokens;
pub mod window;

pub use annotations::{
    annotations_to_turn_stream, build_turn_stream, insert_acknowledgments, load_annotations,
    mix_sequences, validate_annotation, validate_annotations, AnnotatedQA, AnswerAt, QaType,
    TimelineEvent, VideoAnnotations, VideoMeta, DEFAULT_ACK_TEXT,
};
pub use cache::{CacheState, LatencyModel, PrefillAccounting};
pub use context::{
    AssistantOutcome, Message, MessageContent, Role, StreamConfig, TurnPair, VideoChunk,
};
pub use error::{Error, Result};
pub use samples::{
    balanced_loss, load_log_probs, naive_balanced_loss, read_samples, sample_token_seq,
    samples_from_jsonl, samples_to_jsonl, supervision, unroll, validate_sample, write_samples,
    MessageKind, SampleMessage, SupervisionRole, SupervisionVector, TokenLogProbs, TrainingSample,
};
pub use session::{
    compare_modes, emit_metrics, load_metrics, load_schedule, metrics_from_string,
    metrics_to_string, run_session, ComparisonReport, MetricsFormat, MetricsRecord, ModeReport,
    ScheduledQuery, ScheduledResponse, SessionSchedule, SimMode, StepEvent,
};
pub use tokens::{chunk_token_cost, tokenize_message, tokenize_messages, tokenize_turn, TokenSeq};
pub use window::{ContextState, QAGroup, TruncationEvent, TruncationMode, WindowConfig};

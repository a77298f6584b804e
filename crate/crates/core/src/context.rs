//! Chunk-wise conversational layout for a streaming video assistant.
//!
//! The video feed is cut into fixed-duration chunks. Every chunk becomes one
//! user/assistant turn pair: the user message carries the chunk's frames plus
//! an optional question asked during that chunk, the assistant message carries
//! either spoken text, a short acknowledgment, or the silent marker. Context
//! for any model invocation is the concatenation of these turns in arrival
//! order, which is what makes prefix caching effective between chunks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when snapping a timestamp onto the chunk grid, to absorb
/// float artifacts like `0.3 / 0.1 == 2.999…96`.
const SNAP_EPS: f64 = 1e-9;

/// Geometry of the incoming stream and the synthetic token costs of its parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    /// Wall-clock duration of one video chunk, in seconds.
    pub chunk_seconds: f64,
    /// Video sampling rate, frames per second.
    pub fps: f64,
    /// Tokens contributed by one encoded frame.
    pub tokens_per_frame: u32,
    /// Tokens of chat-template scaffolding per message (role tag etc.).
    pub role_header_tokens: u32,
    /// Tokens of the silent marker emitted when the assistant stays quiet.
    pub silent_marker_tokens: u32,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            chunk_seconds: 1.0,
            fps: 2.0,
            tokens_per_frame: 64,
            role_header_tokens: 2,
            silent_marker_tokens: 1,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.chunk_seconds.is_finite() && self.chunk_seconds > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "chunk_seconds must be positive, got {}",
                self.chunk_seconds
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        if self.tokens_per_frame == 0 {
            return Err(Error::InvalidConfig("tokens_per_frame must be positive".into()));
        }
        if self.silent_marker_tokens == 0 {
            return Err(Error::InvalidConfig("silent_marker_tokens must be positive".into()));
        }
        let frames = self.chunk_seconds * self.fps;
        if (frames - frames.round()).abs() > SNAP_EPS || frames.round() < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "chunk_seconds * fps must be a positive whole number of frames, got {frames}"
            )));
        }
        Ok(())
    }

    /// Frames carried by each chunk. `validate` guarantees this is integral.
    pub fn frames_per_chunk(&self) -> u32 {
        (self.chunk_seconds * self.fps).round() as u32
    }

    /// Chunk the timestamp `t_s` falls into. Timestamps within 1e-9 of a
    /// chunk boundary snap up to the later chunk.
    pub fn chunk_index(&self, t_s: f64) -> u64 {
        (t_s / self.chunk_seconds + SNAP_EPS).floor().max(0.0) as u64
    }

    /// Number of chunks needed to cover `duration_s` (final chunk may be
    /// partial in wall-clock terms; it still carries a full frame complement).
    pub fn chunk_count(&self, duration_s: f64) -> u64 {
        (duration_s / self.chunk_seconds - SNAP_EPS).ceil().max(0.0) as u64
    }

    /// Wall-clock start of a chunk, in seconds.
    pub fn chunk_start_s(&self, chunk_id: u64) -> f64 {
        chunk_id as f64 * self.chunk_seconds
    }
}

/// One fixed-duration slice of the video feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoChunk {
    /// Position in the stream; consecutive from 0.
    pub chunk_id: u64,
    /// Wall-clock start, `chunk_id * chunk_seconds`.
    pub start_s: f64,
    /// Frames in this chunk.
    pub frame_count: u32,
}

impl VideoChunk {
    /// The chunk at position `chunk_id` under `cfg`'s geometry.
    pub fn at(chunk_id: u64, cfg: &StreamConfig) -> Self {
        VideoChunk {
            chunk_id,
            start_s: cfg.chunk_start_s(chunk_id),
            frame_count: cfg.frames_per_chunk(),
        }
    }

    pub fn validate(&self, cfg: &StreamConfig) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::InvalidConfig(format!(
                "chunk {} has zero frames",
                self.chunk_id
            )));
        }
        let expected = cfg.chunk_start_s(self.chunk_id);
        if (self.start_s - expected).abs() > SNAP_EPS {
            return Err(Error::InvalidConfig(format!(
                "chunk {} starts at {}s, expected {}s",
                self.chunk_id, self.start_s, expected
            )));
        }
        Ok(())
    }
}

/// What the assistant produced for one chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "text")]
pub enum AssistantOutcome {
    /// Nothing to say: the single silent marker.
    Silent,
    /// A spoken response.
    Text(String),
    /// A short acknowledgment that a question was heard and an answer is
    /// coming later.
    Acknowledgment(String),
}

impl AssistantOutcome {
    pub fn is_silent(&self) -> bool {
        matches!(self, AssistantOutcome::Silent)
    }

    pub fn is_non_silent(&self) -> bool {
        !self.is_silent()
    }

    /// Spoken text, if any.
    pub fn text(&self) -> Option<&str> {
        match self {
            AssistantOutcome::Silent => None,
            AssistantOutcome::Text(t) | AssistantOutcome::Acknowledgment(t) => Some(t),
        }
    }
}

/// The user/assistant message pair for one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnPair {
    pub chunk: VideoChunk,
    /// Question asked during this chunk, if any. Rendered after the frames
    /// inside the same user message.
    pub question: Option<String>,
    pub answer: AssistantOutcome,
}

impl TurnPair {
    pub fn new(chunk: VideoChunk, question: Option<String>, answer: AssistantOutcome) -> Self {
        TurnPair {
            chunk,
            question,
            answer,
        }
    }

    /// A turn where the user only streams video and the assistant stays quiet.
    pub fn silent(chunk: VideoChunk) -> Self {
        TurnPair::new(chunk, None, AssistantOutcome::Silent)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(q) = &self.question {
            if q.trim().is_empty() {
                return Err(Error::EmptyText("turn question"));
            }
        }
        if let Some(t) = self.answer.text() {
            if t.trim().is_empty() {
                return Err(Error::EmptyText("assistant answer"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

/// Payload of one rendered message.
#[derive(Debug, Clone, PartialEq)]
pub enum MessageContent {
    /// Video frames plus an optional trailing question (user side).
    Chunk {
        chunk: VideoChunk,
        question: Option<String>,
    },
    /// Plain text: a question replayed from evicted history, an answer, or an
    /// acknowledgment.
    Text(String),
    /// The silent marker.
    Silent,
}

/// One message of the rendered context.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub role: Role,
    pub content: MessageContent,
}

impl Message {
    pub fn user(content: MessageContent) -> Self {
        Message {
            role: Role::User,
            content,
        }
    }

    pub fn assistant(content: MessageContent) -> Self {
        Message {
            role: Role::Assistant,
            content,
        }
    }
}

/// The two messages a turn renders to, in order.
pub fn turn_messages(turn: &TurnPair) -> [Message; 2] {
    let user = Message::user(MessageContent::Chunk {
        chunk: turn.chunk.clone(),
        question: turn.question.clone(),
    });
    let assistant = match &turn.answer {
        AssistantOutcome::Silent => Message::assistant(MessageContent::Silent),
        AssistantOutcome::Text(t) | AssistantOutcome::Acknowledgment(t) => {
            Message::assistant(MessageContent::Text(t.clone()))
        }
    };
    [user, assistant]
}

//! Dual sliding windows over the turn stream.
//!
//! Two windows bound context growth. The *video window* keeps the most recent
//! turns (chunks). The *history window* keeps, outside the video window, the
//! newest M question/answer groups as plain text — the frames are gone but
//! the dialogue survives.
//!
//! Truncation comes in two flavors. `Strict` clamps the video window to N
//! turns after every append; it is how training samples replay context.
//! `Floating` lets the window grow to N+N′ turns, then drops the N′ oldest in
//! one batch. Between batch drops the rendered context only ever gains a
//! suffix, so a prefix cache keeps hitting; that is the whole point.

use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::context::{turn_messages, Message, MessageContent, StreamConfig, TurnPair};
use crate::error::{Error, Result};
use crate::tokens::{tokenize_messages, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// Grow to `window_chunks + margin_chunks`, then drop `margin_chunks`
    /// oldest turns at once.
    Floating,
    /// Never exceed `window_chunks`; drop immediately.
    Strict,
}

/// Window geometry: N video chunks, N′ truncation margin, M history groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// N: video turns retained after a truncation.
    pub window_chunks: usize,
    /// N′: extra turns the floating window may accumulate before truncating.
    pub margin_chunks: usize,
    /// M: question/answer groups retained outside the video window.
    pub history_groups: usize,
    pub mode: TruncationMode,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_chunks: 30,
            margin_chunks: 15,
            history_groups: 10,
            mode: TruncationMode::Floating,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_chunks == 0 {
            return Err(Error::InvalidConfig("window_chunks must be positive".into()));
        }
        if self.mode == TruncationMode::Floating && self.margin_chunks == 0 {
            return Err(Error::InvalidConfig(
                "floating truncation needs margin_chunks >= 1".into(),
            ));
        }
        Ok(())
    }

    /// A copy clamped to strict truncation (used for training-sample replay).
    pub fn strict(&self) -> WindowConfig {
        WindowConfig {
            mode: TruncationMode::Strict,
            ..*self
        }
    }
}

/// One question and the responses it drew (acknowledgments included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAGroup {
    /// Chunk the group is anchored at: the question's chunk, or the first
    /// response's chunk for a question-less group.
    pub question_turn: u64,
    /// `None` when responses arrived without a preceding question.
    pub question: Option<String>,
    /// (chunk id, text) of every non-silent response, in arrival order.
    pub response_turns: Vec<(u64, String)>,
    /// The newest group stays open: future responses still join it.
    pub open: bool,
}

/// Emitted when `append_turn` dropped turns from the video window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncationEvent {
    /// Chunk whose arrival triggered the truncation.
    pub at_chunk: u64,
    /// Chunk ids dropped from the video window (contiguous, oldest first).
    pub dropped_chunks: Range<u64>,
    /// History groups evicted to get back under the M budget.
    pub dropped_history_groups: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct GroupState {
    anchor_chunk: u64,
    question: Option<String>,
    responses: Vec<(u64, String)>,
}

/// The retained conversation: windowed turns plus evicted-history groups.
///
/// Group membership in "history" is derived, not stored: a group whose anchor
/// chunk precedes the current window start renders as plain text before the
/// windowed turns. Nothing moves at truncation except the dropped turns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextState {
    turns: VecDeque<TurnPair>,
    groups: Vec<GroupState>,
    total_chunks_seen: u64,
}

impl ContextState {
    pub fn new() -> Self {
        ContextState::default()
    }

    /// Chunk id of the oldest turn still in the video window.
    pub fn window_start(&self) -> u64 {
        self.turns
            .front()
            .map(|t| t.chunk.chunk_id)
            .unwrap_or(self.total_chunks_seen)
    }

    pub fn window_len(&self) -> usize {
        self.turns.len()
    }

    pub fn total_chunks_seen(&self) -> u64 {
        self.total_chunks_seen
    }

    pub fn turns(&self) -> impl Iterator<Item = &TurnPair> {
        self.turns.iter()
    }

    /// Record the turn's question/response into the group ledger.
    fn record_group_events(&mut self, turn: &TurnPair) {
        let chunk_id = turn.chunk.chunk_id;
        if let Some(q) = &turn.question {
            // A question closes the previous group and opens a new one.
            self.groups.push(GroupState {
                anchor_chunk: chunk_id,
                question: Some(q.clone()),
                responses: Vec::new(),
            });
        }
        if let Some(text) = turn.answer.text() {
            match self.groups.last_mut() {
                Some(g) => g.responses.push((chunk_id, text.to_string())),
                // Response before any question: open a question-less group.
                None => self.groups.push(GroupState {
                    anchor_chunk: chunk_id,
                    question: None,
                    responses: vec![(chunk_id, text.to_string())],
                }),
            }
        }
    }

    fn admit(&mut self, turn: TurnPair) -> Result<()> {
        turn.validate()?;
        if turn.chunk.chunk_id != self.total_chunks_seen {
            return Err(Error::OutOfOrderChunk {
                expected: self.total_chunks_seen,
                got: turn.chunk.chunk_id,
            });
        }
        self.record_group_events(&turn);
        self.turns.push_back(turn);
        self.total_chunks_seen += 1;
        Ok(())
    }

    fn drop_oldest_turns(&mut self, count: usize) -> Range<u64> {
        let start = self.window_start();
        for _ in 0..count {
            self.turns.pop_front();
        }
        start..start + count as u64
    }

    /// Append the next turn, truncating per `cfg` when the window overflows.
    pub fn append_turn(
        &mut self,
        turn: TurnPair,
        cfg: &WindowConfig,
    ) -> Result<Option<TruncationEvent>> {
        cfg.validate()?;
        let at_chunk = turn.chunk.chunk_id;
        self.admit(turn)?;

        let overflow = match cfg.mode {
            TruncationMode::Floating => {
                if self.turns.len() >= cfg.window_chunks + cfg.margin_chunks {
                    cfg.margin_chunks
                } else {
                    0
                }
            }
            TruncationMode::Strict => self.turns.len().saturating_sub(cfg.window_chunks),
        };
        if overflow == 0 {
            return Ok(None);
        }
        let dropped_chunks = self.drop_oldest_turns(overflow);
        let dropped_history_groups = self.trim_history(cfg.history_groups);
        Ok(Some(TruncationEvent {
            at_chunk,
            dropped_chunks,
            dropped_history_groups,
        }))
    }

    /// Append without any window bound (ablation baseline).
    pub fn append_unbounded(&mut self, turn: TurnPair) -> Result<()> {
        self.admit(turn)
    }

    /// Evict the oldest history groups beyond `max_groups`. Groups anchored
    /// inside the video window are never counted or evicted. Returns the
    /// number evicted.
    pub fn trim_history(&mut self, max_groups: usize) -> usize {
        let window_start = self.window_start();
        let history = self
            .groups
            .iter()
            .take_while(|g| g.anchor_chunk < window_start)
            .count();
        let evict = history.saturating_sub(max_groups);
        self.groups.drain(..evict);
        evict
    }

    /// History groups currently outside the video window.
    pub fn history_group_count(&self) -> usize {
        let window_start = self.window_start();
        self.groups
            .iter()
            .take_while(|g| g.anchor_chunk < window_start)
            .count()
    }

    /// All retained groups, oldest first. The last one is open.
    pub fn qa_groups(&self) -> Vec<QAGroup> {
        let n = self.groups.len();
        self.groups
            .iter()
            .enumerate()
            .map(|(i, g)| QAGroup {
                question_turn: g.anchor_chunk,
                question: g.question.clone(),
                response_turns: g.responses.clone(),
                open: i + 1 == n,
            })
            .collect()
    }

    /// Text-only rendering of the evicted history region: for each history
    /// group, the question then every response whose turn has itself left the
    /// video window. Responses still inside the window render with their turn
    /// instead.
    pub fn history_messages(&self) -> Vec<Message> {
        let window_start = self.window_start();
        let mut out = Vec::new();
        for g in self
            .groups
            .iter()
            .take_while(|g| g.anchor_chunk < window_start)
        {
            if let Some(q) = &g.question {
                out.push(Message::user(MessageContent::Text(q.clone())));
            }
            for (chunk_id, text) in &g.responses {
                if *chunk_id < window_start {
                    out.push(Message::assistant(MessageContent::Text(text.clone())));
                }
            }
        }
        out
    }

    /// The full rendered context: history region, then windowed turns.
    pub fn messages(&self) -> Vec<Message> {
        let mut out = self.history_messages();
        for turn in &self.turns {
            out.extend(turn_messages(turn));
        }
        out
    }

    /// Render the context to token ids.
    pub fn materialize(&self, scfg: &StreamConfig) -> Result<TokenSeq> {
        tokenize_messages(&self.messages(), scfg)
    }
}

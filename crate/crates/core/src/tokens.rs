//! Deterministic synthetic tokenization.
//!
//! The crate never runs a real tokenizer or vision encoder; it only needs
//! token *identities* so that prefix-cache overlap can be measured exactly.
//! Every token id is an FNV-1a-64 hash with a domain-separation tag, which
//! makes two context renderings share a prefix if and only if they share the
//! same structural prefix (same chunks, same words, same silence) — collisions
//! across domains would need a 64-bit hash collision.
//!
//! Role headers hash (role, position) only, mirroring a real chat template
//! where every user message starts with the same scaffolding tokens.
//! Word ids are position-independent (a vocabulary), video ids are unique per
//! (chunk, position), and the silent marker is a fixed short sequence.

use serde::{Deserialize, Serialize};

use crate::context::{Message, MessageContent, Role, StreamConfig, TurnPair, VideoChunk};
use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

const TAG_HEADER: u8 = 1;
const TAG_VIDEO: u8 = 2;
const TAG_WORD: u8 = 3;
const TAG_SILENT: u8 = 4;

fn fnv1a64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h = FNV_OFFSET;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn role_byte(role: Role) -> u8 {
    match role {
        Role::User => 0,
        Role::Assistant => 1,
    }
}

fn header_token(role: Role, position: u32) -> u64 {
    let mut bytes = vec![TAG_HEADER, role_byte(role)];
    bytes.extend_from_slice(&position.to_le_bytes());
    fnv1a64(bytes)
}

fn video_token(chunk_id: u64, position: u32) -> u64 {
    let mut bytes = vec![TAG_VIDEO];
    bytes.extend_from_slice(&chunk_id.to_le_bytes());
    bytes.extend_from_slice(&position.to_le_bytes());
    fnv1a64(bytes)
}

fn word_token(word: &str) -> u64 {
    let mut bytes = vec![TAG_WORD];
    bytes.extend_from_slice(word.as_bytes());
    fnv1a64(bytes)
}

fn silent_token(position: u32) -> u64 {
    let mut bytes = vec![TAG_SILENT];
    bytes.extend_from_slice(&position.to_le_bytes());
    fnv1a64(bytes)
}

/// A rendered token-id sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    ids: Vec<u64>,
}

impl TokenSeq {
    pub fn new() -> Self {
        TokenSeq::default()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn push(&mut self, id: u64) {
        self.ids.push(id);
    }

    pub fn append(&mut self, other: &TokenSeq) {
        self.ids.extend_from_slice(&other.ids);
    }

    /// Length of the longest common prefix with `other`.
    pub fn common_prefix_len(&self, other: &TokenSeq) -> usize {
        self.ids
            .iter()
            .zip(&other.ids)
            .take_while(|(a, b)| a == b)
            .count()
    }

    pub fn is_prefix_of(&self, other: &TokenSeq) -> bool {
        self.len() <= other.len() && self.common_prefix_len(other) == self.len()
    }
}

impl From<Vec<u64>> for TokenSeq {
    fn from(ids: Vec<u64>) -> Self {
        TokenSeq { ids }
    }
}

/// Token cost of a chunk-bearing user message with no question:
/// role headers plus one token per frame per `tokens_per_frame`.
pub fn chunk_token_cost(chunk: &VideoChunk, cfg: &StreamConfig) -> u64 {
    cfg.role_header_tokens as u64 + chunk.frame_count as u64 * cfg.tokens_per_frame as u64
}

fn push_words(seq: &mut TokenSeq, text: &str, what: &'static str) -> Result<()> {
    let mut any = false;
    for word in text.split_whitespace() {
        seq.push(word_token(word));
        any = true;
    }
    if !any {
        return Err(Error::EmptyText(what));
    }
    Ok(())
}

/// Render one message to token ids. Role/content pairing is enforced:
/// video chunks are user-only, the silent marker is assistant-only.
pub fn tokenize_message(role: Role, content: &MessageContent, cfg: &StreamConfig) -> Result<TokenSeq> {
    let mut seq = TokenSeq::new();
    for i in 0..cfg.role_header_tokens {
        seq.push(header_token(role, i));
    }
    match content {
        MessageContent::Chunk { chunk, question } => {
            if role != Role::User {
                return Err(Error::RoleMismatch {
                    role: "assistant",
                    content: "video chunk",
                });
            }
            for i in 0..chunk.frame_count * cfg.tokens_per_frame {
                seq.push(video_token(chunk.chunk_id, i));
            }
            if let Some(q) = question {
                push_words(&mut seq, q, "chunk question")?;
            }
        }
        MessageContent::Text(text) => {
            push_words(&mut seq, text, "message text")?;
        }
        MessageContent::Silent => {
            if role != Role::Assistant {
                return Err(Error::RoleMismatch {
                    role: "user",
                    content: "silent marker",
                });
            }
            for i in 0..cfg.silent_marker_tokens {
                seq.push(silent_token(i));
            }
        }
    }
    Ok(seq)
}

/// Render a whole turn pair (user message, then assistant message).
pub fn tokenize_turn(turn: &TurnPair, cfg: &StreamConfig) -> Result<TokenSeq> {
    turn.validate()?;
    let mut seq = TokenSeq::new();
    for msg in crate::context::turn_messages(turn) {
        seq.append(&tokenize_message(msg.role, &msg.content, cfg)?);
    }
    Ok(seq)
}

/// Render a message list by simple concatenation.
pub fn tokenize_messages(messages: &[Message], cfg: &StreamConfig) -> Result<TokenSeq> {
    let mut seq = TokenSeq::new();
    for msg in messages {
        seq.append(&tokenize_message(msg.role, &msg.content, cfg)?);
    }
    Ok(seq)
}

//! Unrolling a turn stream into supervised training samples, and the
//! silence-balanced loss over their token log-probabilities.
//!
//! Every non-silent assistant message (acknowledgments included) anchors one
//! training sample whose context is a strict-window replay of the stream up
//! to and including the anchor turn. Inside a sample, all silent assistant
//! messages are supervised (down-weighted by 1/N_silent so silence cannot
//! drown out speech), the anchor message is supervised at full weight, and
//! earlier non-silent assistant messages are plain context.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::{MessageContent, Role, StreamConfig, TurnPair, VideoChunk};
use crate::error::{Error, Result};
use crate::tokens::{tokenize_message, TokenSeq};
use crate::window::{ContextState, WindowConfig};

/// Supervision role of one sample message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionRole {
    /// Conditioning only; no loss.
    Context,
    /// A silent assistant message; supervised at weight 1/N_silent.
    SilentTarget,
    /// The anchor: the sample's final, non-silent assistant message.
    AnswerTarget,
}

/// Content kind of one sample message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    /// Video frames plus optional question (user side).
    Chunk,
    /// Plain text (question or answer).
    Text,
    /// An acknowledgment response.
    Ack,
    /// The silent marker.
    Silent,
}

/// One message of a serialized training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMessage {
    pub role: Role,
    pub kind: MessageKind,
    /// Present on messages derived from a windowed turn; absent on replayed
    /// history text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_id: Option<u64>,
    /// Text payload; for `Chunk` messages this is the attached question.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub supervision: SupervisionRole,
    /// Per-token loss mask applied to every token of this message (0 or 1).
    pub mask: u8,
    /// Per-token loss weight applied to every token of this message.
    pub weight: f64,
    /// Token count under the stream config the sample was built with.
    pub token_count: u64,
}

/// One anchored training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// Chunk id of the anchor turn (the target answer's turn).
    pub anchor_chunk: u64,
    /// Silent assistant messages in this sample.
    pub n_silent: u64,
    pub messages: Vec<SampleMessage>,
}

/// Per-token supervision over a sample's assistant-message tokens, in order.
/// User and video tokens are never indexed here.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionVector {
    pub mask: Vec<bool>,
    pub weights: Vec<f64>,
    pub n_silent: u64,
}

impl SupervisionVector {
    /// T: all indexed target tokens.
    pub fn total_tokens(&self) -> usize {
        self.mask.len()
    }

    /// Number of positions with mask 1.
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask.len() != self.weights.len() {
            return Err(Error::InvalidSample(format!(
                "supervision mask has {} entries but weights has {}",
                self.mask.len(),
                self.weights.len()
            )));
        }
        for (i, w) in self.weights.iter().enumerate() {
            if !w.is_finite() || *w <= 0.0 {
                return Err(Error::InvalidSample(format!(
                    "supervision weight {w} at position {i} must be positive and finite"
                )));
            }
        }
        Ok(())
    }
}

/// Token log-probabilities, one per masked position (sparse) or one per
/// target token with the mask applied afterwards (dense).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProbs {
    pub log_probs: Vec<f64>,
}

fn message_content(msg: &SampleMessage, scfg: &StreamConfig) -> Result<MessageContent> {
    match msg.kind {
        MessageKind::Chunk => {
            let chunk_id = msg.chunk_id.ok_or_else(|| {
                Error::InvalidSample("chunk message without chunk_id".into())
            })?;
            Ok(MessageContent::Chunk {
                chunk: VideoChunk::at(chunk_id, scfg),
                question: msg.text.clone(),
            })
        }
        MessageKind::Text | MessageKind::Ack => {
            let text = msg.text.clone().ok_or_else(|| {
                Error::InvalidSample("text message without text".into())
            })?;
            Ok(MessageContent::Text(text))
        }
        MessageKind::Silent => Ok(MessageContent::Silent),
    }
}

/// Rebuild a sample's full token sequence (user and assistant messages) for
/// replay-oracle comparison.
pub fn sample_token_seq(sample: &TrainingSample, scfg: &StreamConfig) -> Result<TokenSeq> {
    let mut seq = TokenSeq::new();
    for msg in &sample.messages {
        seq.append(&tokenize_message(msg.role, &message_content(msg, scfg)?, scfg)?);
    }
    Ok(seq)
}

fn build_sample(state: &ContextState, scfg: &StreamConfig) -> Result<TrainingSample> {
    let n_silent = state.turns().filter(|t| t.answer.is_silent()).count() as u64;
    let silent_weight = if n_silent > 0 { 1.0 / n_silent as f64 } else { 1.0 };
    let window_len = state.window_len();
    let mut messages = Vec::new();

    for m in state.history_messages() {
        let token_count = tokenize_message(m.role, &m.content, scfg)?.len() as u64;
        let text = match m.content {
            MessageContent::Text(t) => t,
            _ => return Err(Error::InvalidSample("history region must be text-only".into())),
        };
        messages.push(SampleMessage {
            role: m.role,
            kind: MessageKind::Text,
            chunk_id: None,
            text: Some(text),
            supervision: SupervisionRole::Context,
            mask: 0,
            weight: 1.0,
            token_count,
        });
    }

    let mut anchor_chunk = None;
    for (i, turn) in state.turns().enumerate() {
        let chunk_id = turn.chunk.chunk_id;
        let user_content = MessageContent::Chunk {
            chunk: turn.chunk.clone(),
            question: turn.question.clone(),
        };
        messages.push(SampleMessage {
            role: Role::User,
            kind: MessageKind::Chunk,
            chunk_id: Some(chunk_id),
            text: turn.question.clone(),
            supervision: SupervisionRole::Context,
            mask: 0,
            weight: 1.0,
            token_count: tokenize_message(Role::User, &user_content, scfg)?.len() as u64,
        });

        let is_anchor = i + 1 == window_len;
        let (kind, text, supervision, mask, weight) = match &turn.answer {
            crate::context::AssistantOutcome::Silent => (
                MessageKind::Silent,
                None,
                SupervisionRole::SilentTarget,
                1,
                silent_weight,
            ),
            crate::context::AssistantOutcome::Text(t) => (
                MessageKind::Text,
                Some(t.clone()),
                if is_anchor {
                    SupervisionRole::AnswerTarget
                } else {
                    SupervisionRole::Context
                },
                u8::from(is_anchor),
                1.0,
            ),
            crate::context::AssistantOutcome::Acknowledgment(t) => (
                MessageKind::Ack,
                Some(t.clone()),
                if is_anchor {
                    SupervisionRole::AnswerTarget
                } else {
                    SupervisionRole::Context
                },
                u8::from(is_anchor),
                1.0,
            ),
        };
        let content = match &text {
            Some(t) => MessageContent::Text(t.clone()),
            None => MessageContent::Silent,
        };
        messages.push(SampleMessage {
            role: Role::Assistant,
            kind,
            chunk_id: Some(chunk_id),
            text,
            supervision,
            mask,
            weight,
            token_count: tokenize_message(Role::Assistant, &content, scfg)?.len() as u64,
        });
        if is_anchor {
            anchor_chunk = Some(chunk_id);
        }
    }

    let sample = TrainingSample {
        anchor_chunk: anchor_chunk
            .ok_or_else(|| Error::InvalidSample("sample without an anchor turn".into()))?,
        n_silent,
        messages,
    };
    validate_sample(&sample)?;
    Ok(sample)
}

/// Unroll a complete turn stream into training samples, one per non-silent
/// assistant message, in anchor order.
///
/// Replay always uses strict truncation — the sample's window must end
/// exactly at its anchor — so `wcfg.mode` and the floating margin are
/// ignored.
pub fn unroll(
    turns: &[TurnPair],
    wcfg: &WindowConfig,
    scfg: &StreamConfig,
) -> Result<Vec<TrainingSample>> {
    scfg.validate()?;
    let wcfg = wcfg.strict();
    wcfg.validate()?;
    let mut state = ContextState::new();
    let mut samples = Vec::new();
    for turn in turns {
        turn.chunk.validate(scfg)?;
        state.append_turn(turn.clone(), &wcfg)?;
        if turn.answer.is_non_silent() {
            samples.push(build_sample(&state, scfg)?);
        }
    }
    Ok(samples)
}

/// Check a sample's structural invariants.
pub fn validate_sample(sample: &TrainingSample) -> Result<()> {
    let inv = |s: String| Err(Error::InvalidSample(s));
    if sample.messages.is_empty() {
        return inv("sample has no messages".into());
    }
    let mut answer_targets = 0usize;
    let mut silent_count = 0u64;
    for (i, m) in sample.messages.iter().enumerate() {
        if m.mask > 1 {
            return inv(format!("message {i}: mask must be 0 or 1, got {}", m.mask));
        }
        match m.kind {
            MessageKind::Chunk => {
                if m.role != Role::User {
                    return inv(format!("message {i}: chunk content on the assistant side"));
                }
                if m.chunk_id.is_none() {
                    return inv(format!("message {i}: chunk message without chunk_id"));
                }
            }
            MessageKind::Silent => {
                if m.role != Role::Assistant {
                    return inv(format!("message {i}: silent marker on the user side"));
                }
                if m.text.is_some() {
                    return inv(format!("message {i}: silent message carries text"));
                }
                silent_count += 1;
            }
            MessageKind::Text | MessageKind::Ack => {
                match &m.text {
                    Some(t) if !t.trim().is_empty() => {}
                    _ => return inv(format!("message {i}: text message without text")),
                }
            }
        }
        match m.supervision {
            SupervisionRole::Context => {
                if m.mask != 0 {
                    return inv(format!("message {i}: context message with mask 1"));
                }
            }
            SupervisionRole::SilentTarget => {
                if m.kind != MessageKind::Silent {
                    return inv(format!("message {i}: silent target on non-silent content"));
                }
                if m.mask != 1 {
                    return inv(format!("message {i}: silent target must have mask 1"));
                }
            }
            SupervisionRole::AnswerTarget => {
                if m.role != Role::Assistant
                    || !matches!(m.kind, MessageKind::Text | MessageKind::Ack)
                {
                    return inv(format!("message {i}: answer target must be spoken assistant text"));
                }
                if m.mask != 1 {
                    return inv(format!("message {i}: answer target must have mask 1"));
                }
                answer_targets += 1;
            }
        }
        if m.kind == MessageKind::Silent && m.supervision != SupervisionRole::SilentTarget {
            return inv(format!("message {i}: silent message must be a silent target"));
        }
        if m.role == Role::User && m.supervision != SupervisionRole::Context {
            return inv(format!("message {i}: user messages are context only"));
        }
    }
    if answer_targets != 1 {
        return inv(format!("sample needs exactly one answer target, found {answer_targets}"));
    }
    let last = sample.messages.last().expect("non-empty checked above");
    if last.supervision != SupervisionRole::AnswerTarget {
        return inv("the answer target must be the final message".into());
    }
    if last.chunk_id != Some(sample.anchor_chunk) {
        return inv(format!(
            "anchor_chunk {} does not match the final message's chunk {:?}",
            sample.anchor_chunk, last.chunk_id
        ));
    }
    if silent_count != sample.n_silent {
        return inv(format!(
            "n_silent {} does not match the {} silent messages present",
            sample.n_silent, silent_count
        ));
    }
    let silent_weight = if sample.n_silent > 0 {
        1.0 / sample.n_silent as f64
    } else {
        1.0
    };
    for (i, m) in sample.messages.iter().enumerate() {
        let expected = match m.supervision {
            SupervisionRole::SilentTarget => silent_weight,
            _ => 1.0,
        };
        if m.weight != expected {
            return inv(format!(
                "message {i}: weight {} does not match expected {expected}",
                m.weight
            ));
        }
    }
    Ok(())
}

/// Expand a sample's per-message supervision into the per-token vector over
/// assistant-message tokens, re-deriving token counts under `scfg` and
/// cross-checking them against the stored counts.
pub fn supervision(sample: &TrainingSample, scfg: &StreamConfig) -> Result<SupervisionVector> {
    scfg.validate()?;
    validate_sample(sample)?;
    let mut mask = Vec::new();
    let mut weights = Vec::new();
    for (i, m) in sample.messages.iter().enumerate() {
        let derived = tokenize_message(m.role, &message_content(m, scfg)?, scfg)?.len() as u64;
        if derived != m.token_count {
            return Err(Error::InvalidSample(format!(
                "message {i}: stored token_count {} but config derives {derived}",
                m.token_count
            )));
        }
        if m.role == Role::Assistant {
            for _ in 0..derived {
                mask.push(m.mask == 1);
                weights.push(m.weight);
            }
        }
    }
    let sv = SupervisionVector {
        mask,
        weights,
        n_silent: sample.n_silent,
    };
    sv.validate()?;
    Ok(sv)
}

fn check_log_probs(values: &[f64]) -> Result<()> {
    for (index, value) in values.iter().enumerate() {
        if !value.is_finite() || *value > 0.0 {
            return Err(Error::InvalidLogProb {
                index,
                value: *value,
            });
        }
    }
    Ok(())
}

/// Resolve the log-prob vector against the mask: either one value per masked
/// position (in order) or one per target token.
fn densify(sv: &SupervisionVector, lp: &TokenLogProbs) -> Result<Vec<f64>> {
    let masked = sv.masked_count();
    let total = sv.total_tokens();
    check_log_probs(&lp.log_probs)?;
    if lp.log_probs.len() == total {
        Ok(lp.log_probs.clone())
    } else if lp.log_probs.len() == masked {
        let mut dense = vec![0.0; total];
        let mut it = lp.log_probs.iter();
        for (t, m) in sv.mask.iter().enumerate() {
            if *m {
                dense[t] = *it.next().expect("length checked");
            }
        }
        Ok(dense)
    } else {
        Err(Error::LogProbLength {
            got: lp.log_probs.len(),
            masked,
            total,
        })
    }
}

/// The silence-balanced loss:
/// `L = −(1/Σ m_t) · Σ m_t · w_t · log p_t`.
///
/// The denominator is the masked-token *count*, not the weight sum.
pub fn balanced_loss(sv: &SupervisionVector, lp: &TokenLogProbs) -> Result<f64> {
    sv.validate()?;
    let dense = densify(sv, lp)?;
    let masked = sv.masked_count();
    if masked == 0 {
        return Err(Error::UndefinedLoss);
    }
    let weighted: f64 = sv
        .mask
        .iter()
        .zip(&sv.weights)
        .zip(&dense)
        .filter(|((m, _), _)| **m)
        .map(|((_, w), v)| w * v)
        .sum();
    Ok(-weighted / masked as f64)
}

/// Reference implementation of the same loss, written exactly as the formula
/// reads — an explicit per-token sum with the mask as a 0/1 factor. Kept
/// deliberately separate from [`balanced_loss`] for cross-checking.
pub fn naive_balanced_loss(sv: &SupervisionVector, lp: &TokenLogProbs) -> Result<f64> {
    sv.validate()?;
    let dense = densify(sv, lp)?;
    let mut mask_sum = 0.0_f64;
    let mut weighted_sum = 0.0_f64;
    for t in 0..sv.total_tokens() {
        let m_t = if sv.mask[t] { 1.0 } else { 0.0 };
        mask_sum += m_t;
        weighted_sum += m_t * sv.weights[t] * dense[t];
    }
    if mask_sum == 0.0 {
        return Err(Error::UndefinedLoss);
    }
    Ok(-(1.0 / mask_sum) * weighted_sum)
}

/// Serialize samples as line-delimited JSON, one record per line.
pub fn samples_to_jsonl(samples: &[TrainingSample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).map_err(|e| {
            Error::json("<jsonl buffer>", e)
        })?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse line-delimited JSON samples, validating each record.
pub fn samples_from_jsonl(raw: &str) -> Result<Vec<TrainingSample>> {
    let mut samples = Vec::new();
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: TrainingSample =
            serde_json::from_str(line).map_err(|e| Error::json("<jsonl buffer>", e))?;
        validate_sample(&sample)?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn write_samples(path: &Path, samples: &[TrainingSample]) -> Result<()> {
    let out = samples_to_jsonl(samples)?;
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<Vec<TrainingSample>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    samples_from_jsonl(&raw)
}

/// Load a log-prob file: `{"log_probs": [...]}`.
pub fn load_log_probs(path: &Path) -> Result<TokenLogProbs> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::json(path, e))
}

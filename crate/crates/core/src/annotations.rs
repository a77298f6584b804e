//! Timestamped QA annotations and their expansion onto the chunk timeline.
//!
//! Annotations describe, per video, when a question was asked and when its
//! answer(s) became available. Three interaction types exist: an immediate
//! answer (`RealTime`), a single delayed answer (`Proactive`), and several
//! answers spread over time (`MultiResponse`). Delayed types get a short
//! acknowledgment inserted at question time so the assistant visibly commits
//! to answering. All annotations of one video are then merged onto the chunk
//! grid — colliding events defer deterministically to the next free chunk —
//! and finally expanded into a complete turn stream with silent fill.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::{AssistantOutcome, StreamConfig, TurnPair, VideoChunk};
use crate::error::{Error, Result};

/// Acknowledgment wording used when the caller does not supply one.
pub const DEFAULT_ACK_TEXT: &str = "okay, keeping an eye on it";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaType {
    /// Exactly one answer, at question time.
    RealTime,
    /// Exactly one answer, strictly after question time.
    Proactive,
    /// Two or more answers at strictly increasing times after the question.
    MultiResponse,
}

/// One answer and when it becomes available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerAt {
    pub text: String,
    /// Seconds from video start.
    pub t: f64,
    /// Set only by `insert_acknowledgments`; must be false in input files.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_ack: bool,
}

/// One annotated question with its timestamped answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedQA {
    pub qa_id: String,
    pub qa_type: QaType,
    pub question: String,
    /// Seconds from video start.
    pub question_t: f64,
    pub answers: Vec<AnswerAt>,
}

/// The per-video annotation document as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotations {
    pub video_id: String,
    pub duration_s: f64,
    pub qas: Vec<AnnotatedQA>,
}

/// Video duration plus the stream geometry used to snap timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoMeta {
    pub duration_s: f64,
    pub cfg: StreamConfig,
}

/// One chunk's worth of merged annotation events.
#[derive(Debug, Clone, PartialEq)]
pub struct TimelineEvent {
    pub chunk_id: u64,
    pub question: Option<String>,
    /// Never `Silent`; silent chunks simply have no event.
    pub response: Option<AssistantOutcome>,
}

fn violation(qa_id: &str, rule: impl Into<String>) -> Error {
    Error::AnnotationViolation {
        qa_id: qa_id.to_string(),
        rule: rule.into(),
    }
}

/// Check one annotation's structural and per-type rules.
///
/// Timestamp-vs-duration coverage is a per-video concern and is checked by
/// [`validate_annotations`] instead.
pub fn validate_annotation(qa: &AnnotatedQA) -> Result<()> {
    if qa.qa_id.trim().is_empty() {
        return Err(violation(&qa.qa_id, "qa_id must be non-empty"));
    }
    if qa.question.trim().is_empty() {
        return Err(violation(&qa.qa_id, "question must be non-empty"));
    }
    if !qa.question_t.is_finite() || qa.question_t < 0.0 {
        return Err(violation(
            &qa.qa_id,
            format!("question_t must be a non-negative time, got {}", qa.question_t),
        ));
    }
    for (i, a) in qa.answers.iter().enumerate() {
        if a.text.trim().is_empty() {
            return Err(violation(&qa.qa_id, format!("answer {i} has empty text")));
        }
        if !a.t.is_finite() || a.t < 0.0 {
            return Err(violation(
                &qa.qa_id,
                format!("answer {i} has invalid time {}", a.t),
            ));
        }
        if a.is_ack {
            return Err(violation(
                &qa.qa_id,
                format!("answer {i} pre-marks is_ack; acknowledgments are inserted, not annotated"),
            ));
        }
    }
    match qa.qa_type {
        QaType::RealTime => {
            if qa.answers.len() != 1 {
                return Err(violation(
                    &qa.qa_id,
                    format!("real_time needs exactly one answer, got {}", qa.answers.len()),
                ));
            }
            if qa.answers[0].t != qa.question_t {
                return Err(violation(
                    &qa.qa_id,
                    format!(
                        "real_time answer must be at question_t ({}), got {}",
                        qa.question_t, qa.answers[0].t
                    ),
                ));
            }
        }
        QaType::Proactive => {
            if qa.answers.len() != 1 {
                return Err(violation(
                    &qa.qa_id,
                    format!("proactive needs exactly one answer, got {}", qa.answers.len()),
                ));
            }
            if qa.answers[0].t <= qa.question_t {
                return Err(violation(
                    &qa.qa_id,
                    format!(
                        "proactive answer must come strictly after question_t ({}), got {}",
                        qa.question_t, qa.answers[0].t
                    ),
                ));
            }
        }
        QaType::MultiResponse => {
            if qa.answers.len() < 2 {
                return Err(violation(
                    &qa.qa_id,
                    format!("multi_response needs at least two answers, got {}", qa.answers.len()),
                ));
            }
            // question_t itself is reserved for the inserted acknowledgment,
            // so annotated answers must be strictly later.
            for pair in std::iter::once(qa.question_t)
                .chain(qa.answers.iter().map(|a| a.t))
                .collect::<Vec<_>>()
                .windows(2)
            {
                if pair[1] <= pair[0] {
                    return Err(violation(
                        &qa.qa_id,
                        format!(
                            "multi_response answers must be strictly increasing and after question_t; {} does not follow {}",
                            pair[1], pair[0]
                        ),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Validate a whole per-video document: every annotation individually, unique
/// qa_ids, and all timestamps inside the video.
pub fn validate_annotations(va: &VideoAnnotations, cfg: &StreamConfig) -> Result<()> {
    cfg.validate()?;
    if !va.duration_s.is_finite() || va.duration_s <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "duration_s must be positive, got {}",
            va.duration_s
        )));
    }
    let total_chunks = cfg.chunk_count(va.duration_s);
    let mut seen = std::collections::HashSet::new();
    for qa in &va.qas {
        validate_annotation(qa)?;
        if !seen.insert(qa.qa_id.as_str()) {
            return Err(violation(&qa.qa_id, "duplicate qa_id in this video"));
        }
        for t in std::iter::once(qa.question_t).chain(qa.answers.iter().map(|a| a.t)) {
            if cfg.chunk_index(t) >= total_chunks {
                return Err(Error::TimestampOutOfRange {
                    qa_id: qa.qa_id.clone(),
                    t,
                    duration_s: va.duration_s,
                });
            }
        }
    }
    Ok(())
}

/// Prepend an acknowledgment at question time to every delayed-answer
/// annotation (`Proactive`, `MultiResponse`); `RealTime` passes through.
pub fn insert_acknowledgments(qas: &[AnnotatedQA], ack_text: &str) -> Result<Vec<AnnotatedQA>> {
    if ack_text.trim().is_empty() {
        return Err(Error::EmptyText("acknowledgment text"));
    }
    Ok(qas
        .iter()
        .map(|qa| {
            let mut qa = qa.clone();
            if matches!(qa.qa_type, QaType::Proactive | QaType::MultiResponse) {
                qa.answers.insert(
                    0,
                    AnswerAt {
                        text: ack_text.to_string(),
                        t: qa.question_t,
                        is_ack: true,
                    },
                );
            }
            qa
        })
        .collect())
}

fn next_free<V>(taken: &BTreeMap<u64, V>, from: u64, total_chunks: u64, qa_id: &str) -> Result<u64> {
    let mut chunk = from;
    while taken.contains_key(&chunk) {
        chunk += 1;
    }
    if chunk >= total_chunks {
        return Err(Error::DeferralOverflow {
            qa_id: qa_id.to_string(),
            total_chunks,
        });
    }
    Ok(chunk)
}

/// Merge all annotations of one video onto the chunk grid.
///
/// Annotations are processed in qa_id order; within one annotation, answers
/// in their given order. A question claims the first question-free chunk at
/// or after its snapped timestamp. A response claims the first response-free
/// chunk at or after max(its snapped timestamp, its question's final chunk,
/// previous response's chunk + 1) — so responses never precede their question
/// and never reorder, even after deferral. Questions and responses may share
/// a chunk (one turn holds both).
pub fn mix_sequences(qas: &[AnnotatedQA], meta: &VideoMeta) -> Result<Vec<TimelineEvent>> {
    meta.cfg.validate()?;
    let total_chunks = meta.cfg.chunk_count(meta.duration_s);
    let mut by_id: Vec<&AnnotatedQA> = qas.iter().collect();
    by_id.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));

    let mut questions: BTreeMap<u64, String> = BTreeMap::new();
    let mut responses: BTreeMap<u64, AssistantOutcome> = BTreeMap::new();

    for qa in by_id {
        let q_chunk = next_free(
            &questions,
            meta.cfg.chunk_index(qa.question_t),
            total_chunks,
            &qa.qa_id,
        )?;
        questions.insert(q_chunk, qa.question.clone());

        let mut prev: Option<u64> = None;
        for a in &qa.answers {
            let earliest = match prev {
                None => q_chunk.max(meta.cfg.chunk_index(a.t)),
                Some(p) => (p + 1).max(meta.cfg.chunk_index(a.t)),
            };
            let r_chunk = next_free(&responses, earliest, total_chunks, &qa.qa_id)?;
            let outcome = if a.is_ack {
                AssistantOutcome::Acknowledgment(a.text.clone())
            } else {
                AssistantOutcome::Text(a.text.clone())
            };
            responses.insert(r_chunk, outcome);
            prev = Some(r_chunk);
        }
    }

    let mut chunks: Vec<u64> = questions.keys().chain(responses.keys()).copied().collect();
    chunks.sort_unstable();
    chunks.dedup();
    Ok(chunks
        .into_iter()
        .map(|chunk_id| TimelineEvent {
            chunk_id,
            question: questions.remove(&chunk_id),
            response: responses.remove(&chunk_id),
        })
        .collect())
}

/// Expand a collision-free timeline into the complete turn stream:
/// one turn per chunk, silent wherever nothing is scheduled.
pub fn build_turn_stream(events: &[TimelineEvent], meta: &VideoMeta) -> Result<Vec<TurnPair>> {
    meta.cfg.validate()?;
    let total_chunks = meta.cfg.chunk_count(meta.duration_s);
    let mut by_chunk: BTreeMap<u64, &TimelineEvent> = BTreeMap::new();
    for ev in events {
        if ev.chunk_id >= total_chunks {
            return Err(Error::InvalidConfig(format!(
                "timeline event at chunk {} beyond the video's {} chunks",
                ev.chunk_id, total_chunks
            )));
        }
        if by_chunk.insert(ev.chunk_id, ev).is_some() {
            return Err(Error::ScheduleCollision {
                kind: "timeline event",
                chunk_id: ev.chunk_id,
            });
        }
    }
    Ok((0..total_chunks)
        .map(|chunk_id| {
            let ev = by_chunk.get(&chunk_id);
            TurnPair::new(
                VideoChunk::at(chunk_id, &meta.cfg),
                ev.and_then(|e| e.question.clone()),
                ev.and_then(|e| e.response.clone())
                    .unwrap_or(AssistantOutcome::Silent),
            )
        })
        .collect())
}

/// Full pipeline: validate, insert acknowledgments, merge, expand.
pub fn annotations_to_turn_stream(
    va: &VideoAnnotations,
    cfg: &StreamConfig,
    ack_text: &str,
) -> Result<Vec<TurnPair>> {
    validate_annotations(va, cfg)?;
    let qas = insert_acknowledgments(&va.qas, ack_text)?;
    let meta = VideoMeta {
        duration_s: va.duration_s,
        cfg: cfg.clone(),
    };
    let events = mix_sequences(&qas, &meta)?;
    build_turn_stream(&events, &meta)
}

/// Load and structurally parse a per-video annotation document.
pub fn load_annotations(path: &Path) -> Result<VideoAnnotations> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::json(path, e))
}

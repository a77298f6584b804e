//! Deterministic streaming-session simulator.
//!
//! Replays a scheduled session chunk by chunk through the window manager and
//! the cache accountant, recording per-step token and latency metrics. Three
//! modes isolate what the floating window and the prefix cache each buy:
//! the full pipeline, an unbounded-context ablation, and a cache-cleared
//! ablation. Everything is single-threaded and RNG-free, so identical inputs
//! produce byte-identical metrics files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheState, LatencyModel};
use crate::context::{AssistantOutcome, StreamConfig, TurnPair, VideoChunk};
use crate::error::{Error, Result};
use crate::window::{ContextState, TruncationMode, WindowConfig};

/// A question the user will ask during the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledQuery {
    /// Seconds from session start.
    pub t: f64,
    pub text: String,
}

/// A response the assistant is scripted to give.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledResponse {
    /// Seconds from session start.
    pub t: f64,
    pub text: String,
    #[serde(default)]
    pub is_ack: bool,
}

/// What happens during a simulated session, timestamp-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSchedule {
    pub duration_s: f64,
    #[serde(default)]
    pub queries: Vec<ScheduledQuery>,
    #[serde(default)]
    pub scripted_responses: Vec<ScheduledResponse>,
}

impl SessionSchedule {
    /// Video only: no queries, no responses.
    pub fn silent(duration_s: f64) -> Self {
        SessionSchedule {
            duration_s,
            queries: Vec::new(),
            scripted_responses: Vec::new(),
        }
    }

    /// Snap events onto the chunk grid, rejecting collisions and
    /// out-of-range timestamps.
    fn compile(&self, cfg: &StreamConfig) -> Result<CompiledSchedule> {
        if !self.duration_s.is_finite() || self.duration_s <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "schedule duration_s must be positive, got {}",
                self.duration_s
            )));
        }
        let total_chunks = cfg.chunk_count(self.duration_s);
        let mut queries = BTreeMap::new();
        for q in &self.queries {
            if q.text.trim().is_empty() {
                return Err(Error::EmptyText("scheduled query"));
            }
            if !q.t.is_finite() || q.t < 0.0 || cfg.chunk_index(q.t) >= total_chunks {
                return Err(Error::ScheduleOutOfRange {
                    kind: "query",
                    t: q.t,
                    duration_s: self.duration_s,
                });
            }
            let chunk_id = cfg.chunk_index(q.t);
            if queries.insert(chunk_id, q.text.clone()).is_some() {
                return Err(Error::ScheduleCollision {
                    kind: "query",
                    chunk_id,
                });
            }
        }
        let mut responses = BTreeMap::new();
        for r in &self.scripted_responses {
            if r.text.trim().is_empty() {
                return Err(Error::EmptyText("scripted response"));
            }
            if !r.t.is_finite() || r.t < 0.0 || cfg.chunk_index(r.t) >= total_chunks {
                return Err(Error::ScheduleOutOfRange {
                    kind: "response",
                    t: r.t,
                    duration_s: self.duration_s,
                });
            }
            let chunk_id = cfg.chunk_index(r.t);
            if responses
                .insert(chunk_id, (r.text.clone(), r.is_ack))
                .is_some()
            {
                return Err(Error::ScheduleCollision {
                    kind: "response",
                    chunk_id,
                });
            }
        }
        Ok(CompiledSchedule {
            total_chunks,
            queries,
            responses,
        })
    }
}

struct CompiledSchedule {
    total_chunks: u64,
    queries: BTreeMap<u64, String>,
    responses: BTreeMap<u64, (String, bool)>,
}

/// Load a schedule document: `{"duration_s": …, "queries": […],
/// "scripted_responses": […]}`.
pub fn load_schedule(path: &Path) -> Result<SessionSchedule> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::json(path, e))
}

/// Which pipeline variant a session runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimMode {
    /// Floating dual window plus prefix caching.
    #[serde(rename = "aura")]
    Aura,
    /// No truncation at all; context grows without bound. Caching stays on.
    #[serde(rename = "no-sliding")]
    NoSlidingWindow,
    /// Floating dual window, but the cache is cleared before every
    /// invocation.
    #[serde(rename = "no-prefix-cache")]
    NoPrefixCache,
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimMode::Aura => "aura",
            SimMode::NoSlidingWindow => "no-sliding",
            SimMode::NoPrefixCache => "no-prefix-cache",
        })
    }
}

impl FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aura" => Ok(SimMode::Aura),
            "no-sliding" => Ok(SimMode::NoSlidingWindow),
            "no-prefix-cache" => Ok(SimMode::NoPrefixCache),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode '{other}' (expected aura, no-sliding, or no-prefix-cache)"
            ))),
        }
    }
}

/// The most informative thing that happened at a step
/// (query > response > truncation > plain chunk).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepEvent {
    ChunkOnly,
    Query,
    Response,
    Truncation,
}

/// One row of the per-step metrics series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Chunk id.
    pub step: u64,
    /// Chunk start, seconds.
    pub t_s: f64,
    pub event: StepEvent,
    pub context_tokens: u64,
    pub reused_tokens: u64,
    pub computed_tokens: u64,
    /// Simulated time-to-first-token; present on model invocations.
    pub ttft_ms: Option<f64>,
    pub truncated: bool,
}

/// Replay `schedule` under `mode`, one model invocation per chunk.
pub fn run_session(
    schedule: &SessionSchedule,
    mode: SimMode,
    wcfg: &WindowConfig,
    scfg: &StreamConfig,
    lm: &LatencyModel,
) -> Result<Vec<MetricsRecord>> {
    scfg.validate()?;
    lm.validate()?;
    // The windowed modes always float; strict clamping is a training-replay
    // concern, not a serving mode.
    let wcfg = WindowConfig {
        mode: TruncationMode::Floating,
        ..*wcfg
    };
    wcfg.validate()?;
    let compiled = schedule.compile(scfg)?;

    let mut state = ContextState::new();
    let mut cache = CacheState::token_granular();
    let mut records = Vec::with_capacity(compiled.total_chunks as usize);

    for chunk_id in 0..compiled.total_chunks {
        let question = compiled.queries.get(&chunk_id).cloned();
        let answer = match compiled.responses.get(&chunk_id) {
            Some((text, true)) => AssistantOutcome::Acknowledgment(text.clone()),
            Some((text, false)) => AssistantOutcome::Text(text.clone()),
            None => AssistantOutcome::Silent,
        };
        let has_response = answer.is_non_silent();
        let turn = TurnPair::new(VideoChunk::at(chunk_id, scfg), question.clone(), answer);

        let truncation = match mode {
            SimMode::Aura | SimMode::NoPrefixCache => state.append_turn(turn, &wcfg)?,
            SimMode::NoSlidingWindow => {
                state.append_unbounded(turn)?;
                None
            }
        };
        if mode == SimMode::NoPrefixCache {
            cache.clear();
        }
        let context = state.materialize(scfg)?;
        let acc = cache.account_invocation(&context);

        let event = if question.is_some() {
            StepEvent::Query
        } else if has_response {
            StepEvent::Response
        } else if truncation.is_some() {
            StepEvent::Truncation
        } else {
            StepEvent::ChunkOnly
        };
        records.push(MetricsRecord {
            step: chunk_id,
            t_s: scfg.chunk_start_s(chunk_id),
            event,
            context_tokens: acc.context_tokens,
            reused_tokens: acc.reused_tokens,
            computed_tokens: acc.computed_tokens,
            ttft_ms: Some(lm.ttft_ms(acc.computed_tokens)),
            truncated: truncation.is_some(),
        });
    }
    Ok(records)
}

/// Summary and computed-token series for one mode of a comparison run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: SimMode,
    pub mean_ttft_ms: f64,
    pub median_ttft_ms: f64,
    pub p90_ttft_ms: f64,
    pub mean_computed_tokens: f64,
    pub max_computed_tokens: u64,
    pub final_context_tokens: u64,
    pub truncation_events: u64,
    /// Per-step computed-token series.
    pub computed_tokens: Vec<u64>,
}

/// All three modes run on one identical schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub aura: ModeReport,
    pub no_sliding: ModeReport,
    pub no_prefix_cache: ModeReport,
}

/// Nearest-rank percentile over an unsorted series (q in 0..=100).
fn percentile(values: &[f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn summarize(mode: SimMode, records: &[MetricsRecord]) -> Result<ModeReport> {
    if records.is_empty() {
        return Err(Error::EmptyMetrics);
    }
    let ttfts: Vec<f64> = records.iter().filter_map(|r| r.ttft_ms).collect();
    let computed: Vec<u64> = records.iter().map(|r| r.computed_tokens).collect();
    Ok(ModeReport {
        mode,
        mean_ttft_ms: ttfts.iter().sum::<f64>() / ttfts.len() as f64,
        median_ttft_ms: percentile(&ttfts, 50.0),
        p90_ttft_ms: percentile(&ttfts, 90.0),
        mean_computed_tokens: computed.iter().sum::<u64>() as f64 / computed.len() as f64,
        max_computed_tokens: computed.iter().copied().max().unwrap_or(0),
        final_context_tokens: records.last().map(|r| r.context_tokens).unwrap_or(0),
        truncation_events: records.iter().filter(|r| r.truncated).count() as u64,
        computed_tokens: computed,
    })
}

/// Run all three modes on the same schedule and summarize.
///
/// Clearing the cache can only add computed tokens at each step, so the full
/// pipeline's mean TTFT never exceeds the cache-cleared ablation's; that
/// relation is asserted here. The unbounded-window ablation is reported
/// without an ordering assertion: under a latency model that is linear in
/// *computed* tokens, caching makes its per-step cost small even though its
/// context (and real-world attention cost) grows without bound — the
/// interesting signal there is `final_context_tokens`.
pub fn compare_modes(
    schedule: &SessionSchedule,
    wcfg: &WindowConfig,
    scfg: &StreamConfig,
    lm: &LatencyModel,
) -> Result<ComparisonReport> {
    let aura = summarize(
        SimMode::Aura,
        &run_session(schedule, SimMode::Aura, wcfg, scfg, lm)?,
    )?;
    let no_sliding = summarize(
        SimMode::NoSlidingWindow,
        &run_session(schedule, SimMode::NoSlidingWindow, wcfg, scfg, lm)?,
    )?;
    let no_prefix_cache = summarize(
        SimMode::NoPrefixCache,
        &run_session(schedule, SimMode::NoPrefixCache, wcfg, scfg, lm)?,
    )?;
    assert!(
        aura.mean_ttft_ms <= no_prefix_cache.mean_ttft_ms + 1e-9,
        "cache reuse cannot slow the pipeline down under a linear latency model"
    );
    Ok(ComparisonReport {
        aura,
        no_sliding,
        no_prefix_cache,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsFormat {
    Csv,
    Json,
}

impl FromStr for MetricsFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(MetricsFormat::Csv),
            "json" => Ok(MetricsFormat::Json),
            other => Err(Error::InvalidConfig(format!(
                "unknown format '{other}' (expected csv or json)"
            ))),
        }
    }
}

/// Render a metrics series to its on-disk representation.
///
/// CSV columns are exactly
/// `step,t_s,event,context_tokens,reused_tokens,computed_tokens,ttft_ms,truncated`;
/// JSON is an array of records with the same field names.
pub fn metrics_to_string(records: &[MetricsRecord], format: MetricsFormat) -> Result<String> {
    if records.is_empty() {
        return Err(Error::EmptyMetrics);
    }
    match format {
        MetricsFormat::Csv => {
            let mut wtr = csv::Writer::from_writer(Vec::new());
            for r in records {
                wtr.serialize(r)?;
            }
            let bytes = wtr.into_inner().map_err(|e| {
                Error::InvalidConfig(format!("csv buffer flush failed: {e}"))
            })?;
            String::from_utf8(bytes)
                .map_err(|e| Error::InvalidConfig(format!("csv output was not utf-8: {e}")))
        }
        MetricsFormat::Json => {
            let mut out = serde_json::to_string_pretty(records)
                .map_err(|e| Error::json("<json buffer>", e))?;
            out.push('\n');
            Ok(out)
        }
    }
}

/// Parse a metrics series back from its on-disk representation.
pub fn metrics_from_string(raw: &str, format: MetricsFormat) -> Result<Vec<MetricsRecord>> {
    let records: Vec<MetricsRecord> = match format {
        MetricsFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(raw.as_bytes());
            rdr.deserialize().collect::<std::result::Result<_, _>>()?
        }
        MetricsFormat::Json => {
            serde_json::from_str(raw).map_err(|e| Error::json("<json buffer>", e))?
        }
    };
    if records.is_empty() {
        return Err(Error::EmptyMetrics);
    }
    Ok(records)
}

/// Write a metrics series to `path`.
pub fn emit_metrics(records: &[MetricsRecord], format: MetricsFormat, path: &Path) -> Result<()> {
    let out = metrics_to_string(records, format)?;
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a metrics series from `path`.
pub fn load_metrics(path: &Path, format: MetricsFormat) -> Result<Vec<MetricsRecord>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    metrics_from_string(&raw, format)
}

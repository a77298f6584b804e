//! Prefix KV-cache accounting and a linear latency model.
//!
//! The cache is modeled by the token-id sequence it currently holds. An
//! invocation reuses the block-aligned longest common prefix between the
//! cache and the new context and recomputes everything from the first
//! divergent token onward; partial blocks are never reused. Latency is
//! linear: a fixed overhead plus a per-token prefill cost for computed
//! tokens, and a separate per-token decode rate for generated ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokens::TokenSeq;

/// What one model invocation cost in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefillAccounting {
    /// Full length of the materialized context.
    pub context_tokens: u64,
    /// Tokens served from the cache (block-aligned common prefix).
    pub reused_tokens: u64,
    /// Tokens prefilled from scratch; `reused + computed == context`.
    pub computed_tokens: u64,
    /// True when nothing was reused.
    pub was_full_recompute: bool,
}

/// The prefix cache: the context rendered by the previous invocation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CacheState {
    cached: TokenSeq,
    block_size: usize,
}

impl CacheState {
    /// An empty cache with the given block granularity.
    pub fn new(block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::InvalidConfig("cache block_size must be positive".into()));
        }
        Ok(CacheState {
            cached: TokenSeq::new(),
            block_size,
        })
    }

    /// Token-granular cache (block size 1), the default.
    pub fn token_granular() -> Self {
        CacheState::new(1).expect("block size 1 is valid")
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn cached_len(&self) -> usize {
        self.cached.len()
    }

    /// Drop everything; the next invocation recomputes in full.
    pub fn clear(&mut self) {
        self.cached = TokenSeq::new();
    }

    /// Account one invocation over `context` and leave the cache holding it.
    pub fn account_invocation(&mut self, context: &TokenSeq) -> PrefillAccounting {
        let lcp = self.cached.common_prefix_len(context);
        let reused = (lcp / self.block_size) * self.block_size;
        let computed = context.len() - reused;
        self.cached = context.clone();
        PrefillAccounting {
            context_tokens: context.len() as u64,
            reused_tokens: reused as u64,
            computed_tokens: computed as u64,
            was_full_recompute: reused == 0,
        }
    }
}

/// Linear serving-latency model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    /// Per-invocation overhead (scheduling, sampling setup), milliseconds.
    pub fixed_overhead_ms: f64,
    /// Prefill cost per computed context token, milliseconds.
    pub prefill_ms_per_token: f64,
    /// Autoregressive decode cost per generated token, milliseconds.
    pub decode_ms_per_token: f64,
}

impl Default for LatencyModel {
    /// Calibrated so the default streaming setup lands near 75 ms mean
    /// time-to-first-token, with decoding at ~137 tokens/s.
    fn default() -> Self {
        LatencyModel {
            fixed_overhead_ms: 20.0,
            prefill_ms_per_token: 0.15,
            decode_ms_per_token: 7.3,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fixed_overhead_ms", self.fixed_overhead_ms),
            ("prefill_ms_per_token", self.prefill_ms_per_token),
            ("decode_ms_per_token", self.decode_ms_per_token),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a non-negative finite number, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Time to first token for an invocation that prefilled
    /// `computed_tokens` tokens.
    pub fn ttft_ms(&self, computed_tokens: u64) -> f64 {
        self.fixed_overhead_ms + self.prefill_ms_per_token * computed_tokens as f64
    }

    /// Time to decode `n_tokens` generated tokens. Fractional counts are
    /// allowed (mean response lengths are fractional).
    pub fn decode_time_ms(&self, n_tokens: f64) -> Result<f64> {
        if !n_tokens.is_finite() || n_tokens < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "decode token count must be non-negative, got {n_tokens}"
            )));
        }
        Ok(self.decode_ms_per_token * n_tokens)
    }
}

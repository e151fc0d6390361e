use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Execution counters shared by every match performed through one executor.
///
/// `predicate_evals` counts frame-level atom evaluations. `cache_hits` counts
/// assignments that resumed from a cached prefix, `cache_misses` counts
/// prefix results that had to be computed.
#[derive(Debug, Default)]
pub struct Telemetry {
    predicate_evals: AtomicU64,
    cache_hits: AtomicU64,
    cache_misses: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetrySnapshot {
    pub predicate_evals: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

impl TelemetrySnapshot {
    pub fn cache_hit_rate(&self) -> f64 {
        let total = self.cache_hits + self.cache_misses;
        if total == 0 {
            0.0
        } else {
            self.cache_hits as f64 / total as f64
        }
    }

    pub fn since(&self, earlier: &TelemetrySnapshot) -> TelemetrySnapshot {
        TelemetrySnapshot {
            predicate_evals: self.predicate_evals - earlier.predicate_evals,
            cache_hits: self.cache_hits - earlier.cache_hits,
            cache_misses: self.cache_misses - earlier.cache_misses,
        }
    }
}

impl Telemetry {
    pub fn snapshot(&self) -> TelemetrySnapshot {
        TelemetrySnapshot {
            predicate_evals: self.predicate_evals.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            cache_misses: self.cache_misses.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.predicate_evals.store(0, Ordering::Relaxed);
        self.cache_hits.store(0, Ordering::Relaxed);
        self.cache_misses.store(0, Ordering::Relaxed);
    }

    pub(crate) fn add(&self, delta: &TelemetrySnapshot) {
        if delta.predicate_evals > 0 {
            self.predicate_evals.fetch_add(delta.predicate_evals, Ordering::Relaxed);
        }
        if delta.cache_hits > 0 {
            self.cache_hits.fetch_add(delta.cache_hits, Ordering::Relaxed);
        }
        if delta.cache_misses > 0 {
            self.cache_misses.fetch_add(delta.cache_misses, Ordering::Relaxed);
        }
    }
}

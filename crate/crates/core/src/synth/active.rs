//! Choosing which unlabeled segments to ask about next.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CandidateState;
use crate::executor::Executor;
use crate::scene::SegmentStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Segments on which weighted candidate votes are most evenly split.
    #[default]
    Disagreement,
    /// Uniformly random unlabeled segments.
    Random,
}

/// `min(W+, W-) / (W+ + W-)`, zero when both weights are zero.
pub fn disagreement(w_pos: f64, w_neg: f64) -> f64 {
    let total = w_pos + w_neg;
    if total <= 0.0 {
        0.0
    } else {
        w_pos.min(w_neg) / total
    }
}

/// The `n` vids with the highest disagreement, ties broken by vid order.
/// `votes[q][v]` says whether query `q` matches `vids[v]`.
pub fn rank_by_disagreement(vids: &[String], votes: &[Vec<bool>], weights: &[f64], n: usize) -> Vec<String> {
    let mut scored: Vec<(f64, &String)> = vids
        .iter()
        .enumerate()
        .map(|(v, vid)| {
            let (mut pos, mut neg) = (0.0, 0.0);
            for (q, w) in weights.iter().enumerate() {
                if votes[q][v] {
                    pos += w;
                } else {
                    neg += w;
                }
            }
            (disagreement(pos, neg), vid)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.into_iter().take(n).map(|(_, v)| v.clone()).collect()
}

/// Uniform sample of `k` items keeping their original order.
fn sample_sorted<'a, T>(rng: &mut impl Rng, items: &'a [T], k: usize) -> Vec<&'a T> {
    let mut idx = sample(rng, items.len(), k.min(items.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| &items[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PickConfig {
    pub sample_cap: usize,
    pub query_cap: usize,
    pub selection: Selection,
}

/// Picks up to `n` vids from the sorted unlabeled pool. Candidates vote with
/// weight `max(reg_score, 0)`.
pub fn pick_next_segments(
    unlabeled: &[String],
    candidates: &mut [CandidateState],
    n: usize,
    cfg: PickConfig,
    rng: &mut impl Rng,
    store: &SegmentStore,
    executor: &Executor,
) -> Vec<String> {
    if n == 0 || unlabeled.is_empty() {
        return Vec::new();
    }
    if n >= unlabeled.len() {
        return unlabeled.to_vec();
    }
    if cfg.selection == Selection::Random || candidates.is_empty() {
        return sample_sorted(rng, unlabeled, n).into_iter().cloned().collect();
    }
    let pool: Vec<String> = sample_sorted(rng, unlabeled, cfg.sample_cap).into_iter().cloned().collect();
    let mut idx = sample(rng, candidates.len(), cfg.query_cap.min(candidates.len())).into_vec();
    idx.sort_unstable();
    let weights: Vec<f64> = idx.iter().map(|&i| candidates[i].reg_score.max(0.0)).collect();
    let mut plans: Vec<_> = idx.iter().map(|&i| (candidates[i].compiled(executor), Vec::new())).collect();
    let segments: Vec<_> = pool.iter().map(|v| store.get(v)).collect();
    executor.for_each_mut(&mut plans, |(cq, votes)| {
        *votes = segments.iter().map(|s| s.is_some_and(|s| executor.matches(cq, s))).collect();
    });
    let votes: Vec<Vec<bool>> = plans.into_iter().map(|(_, v)| v).collect();
    rank_by_disagreement(&pool, &votes, &weights, n)
}

//! Candidate scoring and ranking.

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::LabeledEntry;
use crate::dsl::{complexity, Alpha, Query};
use crate::executor::{CompiledQuery, Executor};
use crate::oracle::Label;
use crate::scene::SegmentStore;

/// `2tp / (2tp + fp + fn)`, zero when undefined.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn record(&mut self, predicted: bool, label: Label) {
        match (predicted, label.is_pos()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.tp, self.fp, self.fn_)
    }
}

/// How candidates are scored: regularization strength, complexity weights
/// and the duration granularity used by the complexity term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scoring {
    pub lambda: f64,
    pub alpha: Alpha,
    pub granularity: u32,
}

/// A candidate query and its confusion counts on the labels seen so far.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateState {
    pub query: Query,
    pub key: String,
    #[serde(flatten)]
    pub counts: Confusion,
    pub f1: f64,
    pub reg_score: f64,
    pub complexity: f64,
    #[serde(skip)]
    compiled: Option<Arc<CompiledQuery>>,
}

impl CandidateState {
    pub fn new(query: Query, key: String, scoring: &Scoring) -> Self {
        let r = complexity(&query, scoring.alpha, scoring.granularity);
        Self {
            query,
            key,
            counts: Confusion::default(),
            f1: 0.0,
            reg_score: -scoring.lambda * r,
            complexity: r,
            compiled: None,
        }
    }

    /// A candidate with given counts, for ranking without execution.
    pub fn with_counts(query: Query, key: String, counts: Confusion, scoring: &Scoring) -> Self {
        let mut c = Self::new(query, key, scoring);
        c.counts = counts;
        c.refresh(scoring.lambda);
        c
    }

    /// Number of labels already folded into the counts.
    pub fn seen(&self) -> usize {
        self.counts.total()
    }

    fn refresh(&mut self, lambda: f64) {
        self.f1 = self.counts.f1();
        self.reg_score = self.f1 - lambda * self.complexity;
    }

    /// Folds in every label past `seen()`. Labels must only ever be appended.
    pub fn update(&mut self, labels: &[LabeledEntry], store: &SegmentStore, executor: &Executor, lambda: f64) {
        if self.seen() >= labels.len() {
            return;
        }
        let cq = self.compiled(executor);
        for entry in &labels[self.seen()..] {
            let predicted = store.get(&entry.vid).is_some_and(|s| executor.matches(&cq, s));
            self.counts.record(predicted, entry.label);
        }
        self.refresh(lambda);
    }

    /// The compiled plan, built on first use.
    pub(crate) fn compiled(&mut self, executor: &Executor) -> Arc<CompiledQuery> {
        self.compiled
            .get_or_insert_with(|| Arc::new(executor.compile(&self.query).expect("candidates are executable")))
            .clone()
    }
}

impl PartialEq for CandidateState {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key && self.counts == other.counts && self.f1 == other.f1 && self.reg_score == other.reg_score
    }
}

/// Final ranking: higher regularized score, then lower complexity, then key.
pub fn rank_order(a: &CandidateState, b: &CandidateState) -> Ordering {
    b.reg_score
        .total_cmp(&a.reg_score)
        .then(a.complexity.total_cmp(&b.complexity))
        .then_with(|| a.key.cmp(&b.key))
}

/// Beam ranking: higher raw F1, then lower complexity, then key.
pub fn beam_order(a: &CandidateState, b: &CandidateState) -> Ordering {
    b.f1.total_cmp(&a.f1)
        .then(a.complexity.total_cmp(&b.complexity))
        .then_with(|| a.key.cmp(&b.key))
}

/// Brings every candidate up to date with `labels`.
pub fn score_all(cands: &mut [CandidateState], labels: &[LabeledEntry], store: &SegmentStore, executor: &Executor, lambda: f64) {
    executor.for_each_mut(cands, |c| c.update(labels, store, executor, lambda));
}

/// The `bw` best candidates by raw F1.
pub fn sample_queries(candidates: &[CandidateState], bw: usize) -> Vec<CandidateState> {
    let mut sorted: Vec<&CandidateState> = candidates.iter().collect();
    sorted.sort_by(|a, b| beam_order(a, b));
    sorted.into_iter().take(bw).cloned().collect()
}

/// Re-scores `q_t` on the current labels, sorts it by regularized score and
/// keeps the best `k`.
pub fn retain_top_queries(
    mut q_t: Vec<CandidateState>,
    labels: &[LabeledEntry],
    k: usize,
    lambda: f64,
    store: &SegmentStore,
    executor: &Executor,
) -> Vec<CandidateState> {
    score_all(&mut q_t, labels, store, executor, lambda);
    q_t.sort_by(rank_order);
    q_t.truncate(k);
    q_t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{canonical, parse};
    use crate::predicates::PredicateRegistry;

    const SCORING: Scoring = Scoring {
        lambda: 0.01,
        alpha: Alpha::new(1.0, 1.0, 0.1),
        granularity: 5,
    };

    fn cand(text: &str, tp: usize, fp: usize, fn_: usize, tn: usize) -> CandidateState {
        let q = parse(text, &PredicateRegistry::builtin()).unwrap();
        let key = canonical(&q);
        CandidateState::with_counts(q, key, Confusion { tp, fp, fn_, tn }, &SCORING)
    }

    #[test]
    fn f1_edge_cases() {
        assert_eq!(f1_score(0, 0, 0), 0.0);
        assert_eq!(f1_score(0, 3, 2), 0.0);
        assert_eq!(f1_score(2, 0, 0), 1.0);
        assert!((f1_score(1, 1, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scores_follow_counts() {
        let c = cand("(Near(o1, o2), Bottom(o1))", 3, 1, 1, 5);
        assert_eq!(c.seen(), 10);
        assert!((c.f1 - 0.75).abs() < 1e-12);
        assert!((c.complexity - 3.2).abs() < 1e-12);
        assert!((c.reg_score - (0.75 - 0.032)).abs() < 1e-12);
    }

    #[test]
    fn beam_prefers_simpler_on_ties() {
        let simple = cand("Near(o1, o2)", 2, 1, 0, 5);
        let complex = cand("(Near(o1, o2), Top(o1))", 2, 1, 0, 5);
        let picked = sample_queries(&[complex, simple.clone()], 1);
        assert_eq!(picked[0].key, simple.key);
    }

    #[test]
    fn beam_keeps_everything_when_small() {
        let cs = vec![cand("Near(o1, o2)", 0, 0, 2, 5), cand("Far(o1, o2)", 1, 0, 1, 5)];
        assert_eq!(sample_queries(&cs, 5).len(), 2);
    }

    /// Five first-iteration candidates with F1 0.6, 0.4, 0.4, 0.2, 0.2.
    fn first_iteration() -> Vec<CandidateState> {
        // ten labels, three of them positive
        vec![
            cand("Near(o1, o2)", 3, 4, 0, 3),
            cand("Far(o1, o2)", 2, 5, 1, 2),
            cand("Bottom(o1)", 2, 5, 1, 2),
            cand("LeftOf(o1, o2)", 1, 6, 2, 1),
            cand("Top(o1)", 1, 6, 2, 1),
        ]
    }

    #[test]
    fn first_iteration_beam_and_top_k() {
        let cs = first_iteration();
        let f1s: Vec<f64> = cs.iter().map(|c| (c.f1 * 10.0).round() / 10.0).collect();
        assert_eq!(f1s, vec![0.6, 0.4, 0.4, 0.2, 0.2]);
        let beam = sample_queries(&cs, 2);
        assert_eq!(beam[0].key, cs[0].key);
        // equal F1 and complexity, so the canonical key decides
        assert_eq!(beam[1].key, cs[2].key);
        let mut top = cs.clone();
        top.sort_by(rank_order);
        top.truncate(1);
        assert_eq!(top[0].key, cs[0].key);
    }

    #[test]
    fn new_labels_flip_order() {
        let mut a = cand("Near(o1, o2)", 2, 0, 1, 3);
        let mut b = cand("Far(o1, o2)", 1, 0, 2, 3);
        let mut v = [a.clone(), b.clone()];
        v.sort_by(rank_order);
        assert_eq!(v[0].key, a.key);
        // two more positives that only b matches
        a.counts.fn_ += 2;
        a.refresh(SCORING.lambda);
        b.counts.tp += 2;
        b.refresh(SCORING.lambda);
        let mut v = [a.clone(), b.clone()];
        v.sort_by(rank_order);
        assert_eq!(v[0].key, b.key);
    }

    #[test]
    fn ranking_depends_only_on_counts_and_complexity() {
        let mut cs = first_iteration();
        let mut shuffled = cs.clone();
        shuffled.reverse();
        cs.sort_by(rank_order);
        shuffled.sort_by(rank_order);
        let keys = |v: &[CandidateState]| v.iter().map(|c| c.key.clone()).collect::<Vec<_>>();
        assert_eq!(keys(&cs), keys(&shuffled));
    }
}

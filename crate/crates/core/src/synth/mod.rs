//! Query synthesis by example.
//!
//! The search starts from the empty query and repeatedly expands the current
//! beam. Every expansion is scored on the labeled segments; when the budget
//! schedule allows, the segments the candidates disagree on most are sent to
//! the oracle. The best `bw` children by F1 form the next beam, and every
//! candidate seen competes for the top-k list by regularized score
//! `F1 - lambda * R(q)`. The search stops when no beam query can be expanded
//! any further.

mod active;
mod budget;
mod expand;
mod scoring;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{Alpha, DslError, Query, SearchConfig};
use crate::executor::{ExecError, Executor};
use crate::oracle::{Label, LabelOracle, OracleError};
use crate::scene::SegmentStore;

pub use active::{disagreement, pick_next_segments, rank_by_disagreement, PickConfig, Selection};
pub use budget::{plan_budget, BudgetSchedule};
pub use expand::{atom_instantiations, expand_query, Expander};
pub use scoring::{beam_order, f1_score, rank_order, retain_top_queries, sample_queries, score_all, CandidateState, Confusion, Scoring};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Config(#[from] DslError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("oracle failed: {error}")]
    Aborted {
        error: OracleError,
        partial: Box<SynthesisResult>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Initial,
    Requested,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledEntry {
    pub vid: String,
    pub label: Label,
    pub provenance: Provenance,
}

/// Labeled segments in the order their labels arrived.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LabeledEntry>", into = "Vec<LabeledEntry>")]
pub struct LabeledPool {
    entries: Vec<LabeledEntry>,
    index: HashSet<String>,
}

impl LabeledPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Initial labels from `(vid, label)` pairs.
    pub fn initial<S: Into<String>>(labels: impl IntoIterator<Item = (S, Label)>) -> Result<Self, SynthesisError> {
        let mut pool = Self::new();
        for (vid, label) in labels {
            pool.push(vid.into(), label, Provenance::Initial)?;
        }
        Ok(pool)
    }

    pub fn push(&mut self, vid: String, label: Label, provenance: Provenance) -> Result<(), SynthesisError> {
        if !self.index.insert(vid.clone()) {
            return Err(SynthesisError::Precondition(format!("{vid} is labeled twice")));
        }
        self.entries.push(LabeledEntry { vid, label, provenance });
        Ok(())
    }

    pub fn entries(&self) -> &[LabeledEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, vid: &str) -> bool {
        self.index.contains(vid)
    }

    pub fn positives(&self) -> usize {
        self.entries.iter().filter(|e| e.label.is_pos()).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    pub fn requested(&self) -> usize {
        self.entries.iter().filter(|e| e.provenance == Provenance::Requested).count()
    }
}

impl TryFrom<Vec<LabeledEntry>> for LabeledPool {
    type Error = SynthesisError;

    fn try_from(entries: Vec<LabeledEntry>) -> Result<Self, Self::Error> {
        let mut pool = Self::new();
        for e in entries {
            pool.push(e.vid, e.label, e.provenance)?;
        }
        Ok(pool)
    }
}

impl From<LabeledPool> for Vec<LabeledEntry> {
    fn from(pool: LabeledPool) -> Self {
        pool.entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Total labeling budget, initial labels included.
    pub b: usize,
    /// Beam width.
    pub bw: usize,
    pub k: usize,
    pub lambda: f64,
    pub alpha: Alpha,
    pub seed: u64,
    /// Unlabeled segments sampled per pick.
    pub sample_cap: usize,
    /// Candidate queries sampled per pick; `None` means `2 * bw`.
    pub query_cap: Option<usize>,
    pub selection: Selection,
}

impl Hyperparams {
    pub fn trajectory() -> Self {
        Self {
            b: 50,
            bw: 10,
            k: 100,
            lambda: 0.01,
            alpha: Alpha::new(1.0, 1.0, 0.1),
            seed: 0,
            sample_cap: 100,
            query_cap: None,
            selection: Selection::Disagreement,
        }
    }

    pub fn scene_graph() -> Self {
        Self {
            lambda: 0.001,
            k: 1000,
            ..Self::trajectory()
        }
    }

    pub fn with_budget(mut self, b: usize) -> Self {
        self.b = b;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn query_cap(&self) -> usize {
        self.query_cap.unwrap_or(2 * self.bw)
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::trajectory()
    }
}

/// The hyperparameter file: every field optional, missing ones taken from
/// the defaults being overridden.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperFile {
    pub b: Option<usize>,
    pub bw: Option<usize>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub alpha: Option<[f64; 3]>,
    pub n_g: Option<usize>,
    pub n_p: Option<usize>,
    pub n_v: Option<usize>,
    pub duration_values: Option<Vec<u32>>,
    pub seed: Option<u64>,
    pub sample_cap: Option<usize>,
    pub query_cap: Option<usize>,
    pub selection: Option<Selection>,
}

impl HyperFile {
    pub fn apply(&self, config: &mut SearchConfig, hyper: &mut Hyperparams) {
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(hyper.b, self.b);
        set!(hyper.bw, self.bw);
        set!(hyper.k, self.k);
        set!(hyper.lambda, self.lambda);
        set!(hyper.seed, self.seed);
        set!(hyper.sample_cap, self.sample_cap);
        set!(hyper.selection, self.selection);
        if let Some(a) = self.alpha {
            hyper.alpha = a.into();
        }
        if self.query_cap.is_some() {
            hyper.query_cap = self.query_cap;
        }
        set!(config.n_g, self.n_g);
        set!(config.n_p, self.n_p);
        set!(config.n_v, self.n_v);
        set!(config.duration_values, self.duration_values);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthTelemetry {
    /// Candidates generated by expansion, summed over iterations.
    pub queries_explored: usize,
    pub predicate_evals: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub oracle_calls: usize,
    pub wall_time_secs: f64,
}

/// What one loop iteration did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Canonical keys of the beam queries expanded.
    pub expanded: Vec<String>,
    pub candidates: usize,
    pub requested: Vec<String>,
    /// Canonical keys of the next beam.
    pub beam: Vec<String>,
    pub top_k: usize,
    pub labels_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisResult {
    pub top_k: Vec<CandidateState>,
    pub labels_used: usize,
    pub iterations: usize,
    pub telemetry: SynthTelemetry,
    pub schedule: BudgetSchedule,
    pub labels: LabeledPool,
    pub trace: Vec<IterationTrace>,
}

impl SynthesisResult {
    pub fn best(&self) -> Option<&CandidateState> {
        self.top_k.first()
    }

    /// Candidates tied with the best on regularized score.
    pub fn tied_best(&self) -> &[CandidateState] {
        let Some(best) = self.best() else {
            return &[];
        };
        let n = self.top_k.iter().take_while(|c| c.reg_score == best.reg_score).count();
        &self.top_k[..n]
    }
}

/// Progress snapshot sent to an observer after every iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Progress {
    pub iteration: usize,
    pub labels_used: usize,
    pub budget: usize,
    pub top: Vec<PreviewEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewEntry {
    pub query: String,
    pub f1: f64,
    pub reg_score: f64,
}

impl From<&CandidateState> for PreviewEntry {
    fn from(c: &CandidateState) -> Self {
        Self {
            query: c.query.to_string(),
            f1: c.f1,
            reg_score: c.reg_score,
        }
    }
}

const PREVIEW_LEN: usize = 10;

type Observer<'a> = Box<dyn FnMut(&Progress) + Send + 'a>;

/// One synthesis run over a segment store.
pub struct Synthesis<'a> {
    store: &'a SegmentStore,
    config: SearchConfig,
    hyper: Hyperparams,
    executor: Executor,
    pool: Option<Vec<String>>,
    observer: Option<Observer<'a>>,
}

impl<'a> Synthesis<'a> {
    pub fn new(store: &'a SegmentStore, config: SearchConfig, hyper: Hyperparams, executor: Executor) -> Self {
        Self {
            store,
            config,
            hyper,
            executor,
            pool: None,
            observer: None,
        }
    }

    /// Restricts label requests to these vids. Defaults to the whole store.
    pub fn pool<S: AsRef<str>>(mut self, vids: &[S]) -> Self {
        self.pool = Some(vids.iter().map(|v| v.as_ref().to_string()).collect());
        self
    }

    pub fn observer(mut self, f: impl FnMut(&Progress) + Send + 'a) -> Self {
        self.observer = Some(Box::new(f));
        self
    }

    /// Checks the configuration and initial labels without running.
    pub fn validate(&self, initial: &LabeledPool) -> Result<(), SynthesisError> {
        self.config.validate(self.executor.registry())?;
        let h = &self.hyper;
        if h.bw == 0 || h.k == 0 {
            return Err(SynthesisError::Precondition("bw and k must be at least 1".into()));
        }
        if h.lambda.is_nan() || h.lambda < 0.0 {
            return Err(SynthesisError::Precondition("lambda must be non-negative".into()));
        }
        if initial.positives() == 0 || initial.negatives() == 0 {
            return Err(SynthesisError::Precondition(
                "initial labels need at least one positive and one negative".into(),
            ));
        }
        if let Some(e) = initial.entries().iter().find(|e| self.store.get(&e.vid).is_none()) {
            return Err(SynthesisError::Precondition(format!("unknown segment {}", e.vid)));
        }
        plan_budget(h.b, initial.len(), &self.config)?;
        Ok(())
    }

    pub fn run(mut self, initial: LabeledPool, oracle: &mut dyn LabelOracle) -> Result<SynthesisResult, SynthesisError> {
        self.validate(&initial)?;
        let start = Instant::now();
        let before = self.executor.telemetry().snapshot();
        let store = self.store;
        let ex = self.executor.clone();
        let h = self.hyper;
        let scoring = Scoring {
            lambda: h.lambda,
            alpha: h.alpha,
            granularity: self.config.duration_granularity,
        };
        let schedule = plan_budget(h.b, initial.len(), &self.config)?;
        let expander = Expander::new(&self.config, ex.registry());
        let pick_cfg = PickConfig {
            sample_cap: h.sample_cap,
            query_cap: h.query_cap(),
            selection: h.selection,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(h.seed);

        let pool_vids: Vec<String> = match self.pool.take() {
            Some(v) => v,
            None => store.vids().map(str::to_string).collect(),
        };
        let mut unlabeled: Vec<String> = pool_vids
            .into_iter()
            .filter(|v| !initial.contains(v) && store.get(v).is_some())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        let mut labels = initial;
        let mut beam = vec![Query::empty()];
        let mut expanded: HashSet<String> = HashSet::new();
        let mut top: Vec<CandidateState> = Vec::new();
        let mut trace = Vec::new();
        let mut telemetry = SynthTelemetry::default();
        let mut iteration = 0;

        let finish = |top: Vec<CandidateState>,
                      labels: LabeledPool,
                      trace: Vec<IterationTrace>,
                      mut telemetry: SynthTelemetry,
                      schedule: BudgetSchedule| {
            let spent = ex.telemetry().snapshot().since(&before);
            telemetry.predicate_evals = spent.predicate_evals;
            telemetry.cache_hits = spent.cache_hits;
            telemetry.cache_misses = spent.cache_misses;
            telemetry.wall_time_secs = start.elapsed().as_secs_f64();
            SynthesisResult {
                top_k: top,
                labels_used: labels.len(),
                iterations: trace.len(),
                telemetry,
                schedule,
                labels,
                trace,
            }
        };

        while !beam.is_empty() {
            let mut expanded_now = Vec::with_capacity(beam.len());
            let mut children: Vec<(String, Query)> = Vec::new();
            let mut child_keys: HashSet<String> = HashSet::new();
            for q in &beam {
                let key = crate::dsl::canonical(q);
                expanded.insert(key.clone());
                expanded_now.push(key);
            }
            for q in &beam {
                for (key, child) in expander.expand(q) {
                    if !expanded.contains(&key) && child_keys.insert(key.clone()) {
                        children.push((key, child));
                    }
                }
            }
            if children.is_empty() {
                break;
            }
            let n_children = children.len();
            telemetry.queries_explored += n_children;

            // Reuse scores of candidates already in the top-k list.
            let known: HashMap<&str, &CandidateState> = top.iter().map(|c| (c.key.as_str(), c)).collect();
            let mut cands: Vec<CandidateState> = children
                .into_iter()
                .map(|(key, q)| match known.get(key.as_str()) {
                    Some(c) => (*c).clone(),
                    None => CandidateState::new(q, key, &scoring),
                })
                .collect();
            drop(known);
            score_all(&mut cands, labels.entries(), store, &ex, h.lambda);

            let allot = schedule.allotment(iteration).min(h.b.saturating_sub(labels.len()));
            let mut requested = Vec::new();
            if allot > 0 && !unlabeled.is_empty() {
                requested = pick_next_segments(&unlabeled, &mut cands, allot, pick_cfg, &mut rng, store, &ex);
                telemetry.oracle_calls += 1;
                match oracle.label_batch(&requested) {
                    Ok(new_labels) => {
                        for (vid, label) in requested.iter().zip(new_labels) {
                            labels.push(vid.clone(), label, Provenance::Requested)?;
                        }
                        let picked: HashSet<&String> = requested.iter().collect();
                        unlabeled.retain(|v| !picked.contains(v));
                    }
                    Err(error) => {
                        let partial = finish(top, labels, trace, telemetry, schedule);
                        return Err(SynthesisError::Aborted {
                            error,
                            partial: Box::new(partial),
                        });
                    }
                }
                score_all(&mut cands, labels.entries(), store, &ex, h.lambda);
            }

            let next = sample_queries(&cands, h.bw);
            let in_top: HashSet<String> = top.iter().map(|c| c.key.clone()).collect();
            top.extend(cands.into_iter().filter(|c| !in_top.contains(&c.key)));
            top = retain_top_queries(top, labels.entries(), h.k, h.lambda, store, &ex);

            trace.push(IterationTrace {
                iteration,
                expanded: expanded_now,
                candidates: n_children,
                requested,
                beam: next.iter().map(|c| c.key.clone()).collect(),
                top_k: top.len(),
                labels_used: labels.len(),
            });
            if let Some(obs) = self.observer.as_mut() {
                obs(&Progress {
                    iteration,
                    labels_used: labels.len(),
                    budget: h.b,
                    top: top.iter().take(PREVIEW_LEN).map(PreviewEntry::from).collect(),
                });
            }
            beam = next.into_iter().map(|c| c.query).collect();
            iteration += 1;
        }
        Ok(finish(top, labels, trace, telemetry, schedule))
    }
}

/// Runs synthesis over the whole store with default options.
pub fn synthesize(
    store: &SegmentStore,
    initial: LabeledPool,
    oracle: &mut dyn LabelOracle,
    config: &SearchConfig,
    hyper: &Hyperparams,
    executor: &Executor,
) -> Result<SynthesisResult, SynthesisError> {
    Synthesis::new(store, config.clone(), *hyper, executor.clone()).run(initial, oracle)
}

/// Convenience for tests and tools: an executor over the builtin registry.
pub fn default_executor() -> Executor {
    Executor::new(Arc::new(crate::predicates::PredicateRegistry::builtin())).with_cache(crate::executor::DEFAULT_CACHE_CAPACITY)
}

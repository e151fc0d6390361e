use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use vqbe_core::datagen::{derive_seed, generate, GenSpec};
use vqbe_core::executor::DEFAULT_CACHE_CAPACITY;
use vqbe_core::oracle::NoiseSpec;
use vqbe_core::synth::HyperFile;
use vqbe_core::{
    Executor, GroundTruthOracle, Hyperparams, Label, LabeledPool, NoisyOracle, PredicateRegistry, Query, SearchConfig,
    SegmentStore, Selection, Synthesis,
};

use crate::targets::resolve_target;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error(transparent)]
    Query(#[from] vqbe_core::DslError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// `2tp / (2tp + fp + fn)` over vid sets; zero when undefined.
pub fn f1(predicted: &BTreeSet<String>, truth: &BTreeSet<String>) -> f64 {
    let tp = predicted.intersection(truth).count();
    let fp = predicted.len() - tp;
    let fn_ = truth.len() - tp;
    vqbe_core::synth::f1_score(tp, fp, fn_)
}

/// Median of a sample; the mean of the middle pair for even lengths and
/// zero for an empty one.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Which search space to use for a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchSpace {
    /// Duration refinement only for targets that have durations.
    #[default]
    Auto,
    Trajectory,
    TrajectoryNoDurations,
    SceneGraph,
}

impl SearchSpace {
    fn config(self, target: &Query) -> SearchConfig {
        match self {
            SearchSpace::Auto if target.graphs.iter().any(|g| g.duration > 1) => SearchConfig::trajectory(),
            SearchSpace::Auto | SearchSpace::TrajectoryNoDurations => SearchConfig::trajectory().without_durations(),
            SearchSpace::Trajectory => SearchConfig::trajectory(),
            SearchSpace::SceneGraph => SearchConfig::scene_graph(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Segment generator; `n_segments` is replaced by train + test size and
    /// the seed by a per-repetition seed.
    pub dataset: GenSpec,
    pub train_size: usize,
    pub test_size: usize,
    /// Target names (`TQ1`) or query texts.
    pub targets: Vec<String>,
    pub initial_pos: usize,
    pub initial_neg: usize,
    pub budgets: Vec<usize>,
    /// False-negative rates to sweep; false positives use `fp_ratio * fn`.
    pub fn_rates: Vec<f64>,
    pub fp_ratio: f64,
    pub selections: Vec<Selection>,
    pub repetitions: usize,
    pub hyper: HyperFile,
    pub search: SearchSpace,
    pub cache: bool,
    /// Repetitions evaluated concurrently.
    pub workers: usize,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            dataset: GenSpec::pairs(0, 0),
            train_size: 500,
            test_size: 1000,
            targets: vec!["TQ1".into()],
            initial_pos: 2,
            initial_neg: 10,
            budgets: vec![30],
            fn_rates: vec![0.0],
            fp_ratio: 0.1,
            selections: vec![Selection::Disagreement],
            repetitions: 10,
            hyper: HyperFile::default(),
            search: SearchSpace::Auto,
            cache: true,
            workers: 1,
            seed: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Spec(m.to_string()));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.train_size == 0 || self.test_size == 0 {
            return bad("train and test sizes must be positive");
        }
        if self.targets.is_empty() || self.budgets.is_empty() || self.fn_rates.is_empty() || self.selections.is_empty() {
            return bad("targets, budgets, fn_rates and selections must be nonempty");
        }
        if self.initial_pos == 0 || self.initial_neg == 0 {
            return bad("need at least one initial positive and negative");
        }
        if let Some(b) = self.budgets.iter().find(|&&b| b < self.initial_pos + self.initial_neg) {
            return Err(BenchError::Spec(format!("budget {b} is below the initial label count")));
        }
        for &r in &self.fn_rates {
            NoiseSpec::tied(r, 0).validate().map_err(BenchError::Spec)?;
            if !(0.0..=1.0).contains(&(r * self.fp_ratio)) {
                return bad("fp rate out of range");
            }
        }
        GenSpec { n_segments: 1, ..self.dataset.clone() }.validate().map_err(BenchError::Spec)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// One synthesis run and its test-set evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub target: String,
    pub budget: usize,
    pub fn_rate: f64,
    pub selection: Selection,
    pub repetition: usize,
    pub failed: bool,
    pub error: Option<String>,
    /// Median test F1 over the candidates tied for best; 0 on failure.
    pub f1: f64,
    pub best_query: Option<String>,
    pub tied_best: usize,
    pub top_k: usize,
    pub labels_used: usize,
    pub iterations: usize,
    pub queries_explored: usize,
    pub predicate_evals: u64,
    pub cache_hit_rate: f64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub target: String,
    pub budget: usize,
    pub fn_rate: f64,
    pub selection: Selection,
    pub runs: usize,
    pub failures: usize,
    pub median_f1: f64,
    pub median_wall_time_secs: f64,
    pub median_predicate_evals: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn row(&self, target: &str, budget: usize, fn_rate: f64, selection: Selection) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.target == target && r.budget == budget && r.fn_rate == fn_rate && r.selection == selection)
    }
}

struct Job {
    rep: usize,
    target: usize,
    budget: usize,
    fn_rate: f64,
    selection: Selection,
}

struct Prepared {
    name: String,
    query: Query,
}

fn executor(registry: &Arc<PredicateRegistry>, cache: bool) -> Executor {
    let ex = Executor::new(registry.clone());
    if cache {
        ex.with_cache(DEFAULT_CACHE_CAPACITY)
    } else {
        ex
    }
}

fn name_seed(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

fn failed(job: &Job, name: &str, error: String) -> RunRecord {
    RunRecord {
        target: name.to_string(),
        budget: job.budget,
        fn_rate: job.fn_rate,
        selection: job.selection,
        repetition: job.rep,
        failed: true,
        error: Some(error),
        f1: 0.0,
        best_query: None,
        tied_best: 0,
        top_k: 0,
        labels_used: 0,
        iterations: 0,
        queries_explored: 0,
        predicate_evals: 0,
        cache_hit_rate: 0.0,
        wall_time_secs: 0.0,
    }
}

fn run_job(spec: &ExperimentSpec, registry: &Arc<PredicateRegistry>, store: &Arc<SegmentStore>, target: &Prepared, job: &Job) -> RunRecord {
    let ex = executor(registry, spec.cache);
    let rep_seed = derive_seed(spec.seed, job.rep as u64);
    let vids: Vec<String> = store.vids().map(str::to_string).collect();
    let (train, test) = vids.split_at(spec.train_size);
    let truth_train = ex.execute(&target.query, store, train).expect("targets execute");
    let truth_test = ex.execute(&target.query, store, test).expect("targets execute");

    // Labels as the (possibly noisy) labeler sees them.
    let noise = NoiseSpec {
        fn_rate: job.fn_rate,
        fp_rate: job.fn_rate * spec.fp_ratio,
        seed: derive_seed(rep_seed, name_seed(&target.name)),
    };
    let seen = |v: &String| {
        let truth = Label::from_bool(truth_train.contains(v));
        if noise.flips(v, truth) {
            truth.flipped()
        } else {
            truth
        }
    };
    let pos: Vec<&String> = train.iter().filter(|v| seen(v).is_pos()).collect();
    let neg: Vec<&String> = train.iter().filter(|v| !seen(v).is_pos()).collect();
    if pos.len() < spec.initial_pos || neg.len() < spec.initial_neg {
        return failed(job, &target.name, format!("only {} positive and {} negative training segments", pos.len(), neg.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, name_seed(&target.name) ^ 0x5eed));
    let mut pick = |from: &[&String], n: usize| {
        let mut idx = sample(&mut rng, from.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| from[i].clone()).collect::<Vec<_>>()
    };
    let init_pos = pick(&pos, spec.initial_pos);
    let init_neg = pick(&neg, spec.initial_neg);
    let initial = LabeledPool::initial(
        init_pos
            .into_iter()
            .map(|v| (v, Label::Pos))
            .chain(init_neg.into_iter().map(|v| (v, Label::Neg))),
    )
    .expect("distinct vids");

    let mut config = spec.search.config(&target.query);
    let mut hyper = Hyperparams::trajectory();
    if spec.search == SearchSpace::SceneGraph {
        hyper = Hyperparams::scene_graph();
    }
    spec.hyper.apply(&mut config, &mut hyper);
    hyper.b = job.budget;
    hyper.seed = rep_seed;
    hyper.selection = job.selection;

    let base = GroundTruthOracle::new(&target.query, store.clone(), ex.clone()).expect("targets execute");
    let mut oracle = NoisyOracle::new(base, noise);
    let result = Synthesis::new(store, config, hyper, ex.clone()).pool(train).run(initial, &mut oracle);
    let result = match result {
        Ok(r) => r,
        Err(e) => return failed(job, &target.name, e.to_string()),
    };
    let tied = result.tied_best();
    let scores: Vec<f64> = tied
        .iter()
        .map(|c| f1(&ex.execute(&c.query, store, test).expect("candidates execute"), &truth_test))
        .collect();
    let t = &result.telemetry;
    let lookups = t.cache_hits + t.cache_misses;
    RunRecord {
        target: target.name.clone(),
        budget: job.budget,
        fn_rate: job.fn_rate,
        selection: job.selection,
        repetition: job.rep,
        failed: false,
        error: None,
        f1: median(&scores),
        best_query: result.best().map(|c| c.query.to_string()),
        tied_best: tied.len(),
        top_k: result.top_k.len(),
        labels_used: result.labels_used,
        iterations: result.iterations,
        queries_explored: t.queries_explored,
        predicate_evals: t.predicate_evals,
        cache_hit_rate: if lookups == 0 { 0.0 } else { t.cache_hits as f64 / lookups as f64 },
        wall_time_secs: t.wall_time_secs,
    }
}

fn summarize(runs: &[RunRecord]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for r in runs {
        let exists = rows
            .iter()
            .any(|s| s.target == r.target && s.budget == r.budget && s.fn_rate == r.fn_rate && s.selection == r.selection);
        if exists {
            continue;
        }
        let group: Vec<&RunRecord> = runs
            .iter()
            .filter(|x| x.target == r.target && x.budget == r.budget && x.fn_rate == r.fn_rate && x.selection == r.selection)
            .collect();
        let col = |f: &dyn Fn(&RunRecord) -> f64| median(&group.iter().map(|x| f(x)).collect::<Vec<_>>());
        rows.push(SummaryRow {
            target: r.target.clone(),
            budget: r.budget,
            fn_rate: r.fn_rate,
            selection: r.selection,
            runs: group.len(),
            failures: group.iter().filter(|x| x.failed).count(),
            median_f1: col(&|x| x.f1),
            median_wall_time_secs: col(&|x| x.wall_time_secs),
            median_predicate_evals: col(&|x| x.predicate_evals as f64),
        });
    }
    rows
}

/// Runs every (repetition, target, budget, noise rate, selection) cell.
/// Each repetition draws a fresh dataset; the first `train_size` segments
/// are the training pool and the rest the test set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, BenchError> {
    spec.validate()?;
    let registry = Arc::new(PredicateRegistry::builtin());
    let targets: Vec<Prepared> = spec
        .targets
        .iter()
        .map(|t| resolve_target(t, &registry).map(|(name, query)| Prepared { name, query }))
        .collect::<Result<_, _>>()?;
    let mut jobs = Vec::new();
    for rep in 0..spec.repetitions {
        for target in 0..targets.len() {
            for &budget in &spec.budgets {
                for &fn_rate in &spec.fn_rates {
                    for &selection in &spec.selections {
                        jobs.push(Job { rep, target, budget, fn_rate, selection });
                    }
                }
            }
        }
    }
    let dataset = |rep: usize| {
        Arc::new(generate(&GenSpec {
            n_segments: spec.train_size + spec.test_size,
            seed: derive_seed(spec.seed, rep as u64),
            ..spec.dataset.clone()
        }))
    };
    let run_rep = |rep: usize| -> Vec<RunRecord> {
        let store = dataset(rep);
        jobs.iter()
            .filter(|j| j.rep == rep)
            .map(|j| run_job(spec, &registry, &store, &targets[j.target], j))
            .collect()
    };
    let runs: Vec<RunRecord> = if spec.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.workers)
            .build()
            .map_err(|e| BenchError::Spec(e.to_string()))?;
        pool.install(|| (0..spec.repetitions).into_par_iter().flat_map_iter(run_rep).collect())
    } else {
        (0..spec.repetitions).flat_map(run_rep).collect()
    };
    let summary = summarize(&runs);
    Ok(ExperimentReport {
        spec: spec.clone(),
        runs,
        summary,
    })
}

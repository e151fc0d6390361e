use std::collections::BTreeSet;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use parking_lot::Mutex;
use vqbe_core::executor::DEFAULT_CACHE_CAPACITY;
use vqbe_core::oracle::{SubmitError, DEFAULT_LABEL_TIMEOUT};
use vqbe_core::synth::Progress;
use vqbe_core::{
    Executor, Hyperparams, InteractiveOracle, LabelBridge, LabeledPool, PredicateRegistry, SearchConfig, SegmentStore,
    Synthesis, SynthesisError, SynthesisResult,
};

use crate::api::{CreateSession, Preview, ProgressView, SearchPreset, SessionState, VidLabel};
use crate::error::ApiError;

#[derive(Debug, Clone)]
enum Outcome {
    Running,
    Finished(Arc<SynthesisResult>),
    Aborted { message: String, partial: Option<Arc<SynthesisResult>> },
}

struct Inner {
    outcome: Outcome,
    progress: ProgressView,
}

/// One interactive synthesis run, driven by a worker thread that blocks on
/// the label bridge.
pub struct Session {
    pub id: String,
    pub dataset: String,
    store: Arc<SegmentStore>,
    bridge: Arc<LabelBridge>,
    executor: Executor,
    pool: Option<BTreeSet<String>>,
    inner: Mutex<Inner>,
    /// Serializes label submissions so that validation and delivery happen
    /// together.
    submit_lock: Mutex<()>,
}

fn search_setup(req: &CreateSession) -> (SearchConfig, Hyperparams) {
    let (mut config, mut hyper) = match req.search {
        SearchPreset::Trajectory => (SearchConfig::trajectory(), Hyperparams::trajectory()),
        SearchPreset::SceneGraph => (SearchConfig::scene_graph(), Hyperparams::scene_graph()),
    };
    req.hyper.apply(&mut config, &mut hyper);
    (config, hyper)
}

impl Session {
    /// Validates `req` and starts the worker. `preload` holds labels from a
    /// replayed log.
    pub fn start(
        id: String,
        req: &CreateSession,
        store: Arc<SegmentStore>,
        preload: &[VidLabel],
        workers: usize,
    ) -> Result<Arc<Self>, ApiError> {
        let (config, hyper) = search_setup(req);
        let initial = LabeledPool::initial(req.initial_labels.iter().map(|l| (l.vid.clone(), l.label)))
            .map_err(|e| ApiError::unprocessable(e.to_string()))?;
        if let Some(pool) = &req.pool {
            if let Some(v) = pool.iter().find(|v| store.get(v).is_none()) {
                return Err(ApiError::unprocessable(format!("pool segment {v} is not in the dataset")));
            }
        }
        let executor = Executor::new(PredicateRegistry::shared_builtin())
            .with_cache(DEFAULT_CACHE_CAPACITY)
            .with_workers(workers)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Synthesis::new(&store, config.clone(), hyper, executor.clone())
            .validate(&initial)
            .map_err(|e| ApiError::unprocessable(e.to_string()))?;

        let bridge = LabelBridge::new();
        for l in preload {
            bridge.preload(&l.vid, l.label);
        }
        let session = Arc::new(Self {
            id,
            dataset: req.dataset.clone(),
            store,
            bridge,
            executor,
            pool: req.pool.as_ref().map(|p| p.iter().cloned().collect()),
            inner: Mutex::new(Inner {
                outcome: Outcome::Running,
                progress: ProgressView {
                    iterations: 0,
                    labels_used: initial.len(),
                    budget: hyper.b,
                    top: Vec::new(),
                },
            }),
            submit_lock: Mutex::new(()),
        });
        let timeout = req.label_timeout_secs.map_or(DEFAULT_LABEL_TIMEOUT, Duration::from_secs);
        let worker = session.clone();
        let pool = req.pool.clone();
        thread::Builder::new()
            .name(format!("session-{}", session.id))
            .spawn(move || worker.run(config, hyper, initial, pool, timeout))
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(session)
    }

    fn run(self: Arc<Self>, config: SearchConfig, hyper: Hyperparams, initial: LabeledPool, pool: Option<Vec<String>>, timeout: Duration) {
        let mut oracle = InteractiveOracle::new(self.bridge.clone()).with_timeout(timeout);
        let observer = {
            let me = self.clone();
            move |p: &Progress| me.inner.lock().progress = ProgressView::from_progress(p)
        };
        let mut synthesis = Synthesis::new(&self.store, config, hyper, self.executor.clone()).observer(observer);
        if let Some(pool) = &pool {
            synthesis = synthesis.pool(pool);
        }
        let outcome = match synthesis.run(initial, &mut oracle) {
            Ok(r) => Outcome::Finished(Arc::new(r)),
            Err(SynthesisError::Aborted { error, partial }) => Outcome::Aborted {
                message: error.to_string(),
                partial: Some(Arc::new(*partial)),
            },
            Err(e) => Outcome::Aborted {
                message: e.to_string(),
                partial: None,
            },
        };
        {
            let mut inner = self.inner.lock();
            if let Outcome::Finished(r) = &outcome {
                inner.progress.labels_used = r.labels_used;
                inner.progress.iterations = r.iterations;
            }
            inner.outcome = outcome;
        }
        self.bridge.close();
    }

    pub fn state(&self) -> SessionState {
        match self.inner.lock().outcome {
            Outcome::Finished(_) => SessionState::Finished,
            Outcome::Aborted { .. } => SessionState::Aborted,
            Outcome::Running if self.bridge.pending().is_empty() => SessionState::Searching,
            Outcome::Running => SessionState::AwaitingLabels,
        }
    }

    pub fn progress(&self) -> ProgressView {
        self.inner.lock().progress.clone()
    }

    pub fn pending(&self) -> Vec<String> {
        self.bridge.pending()
    }

    pub fn store(&self) -> &SegmentStore {
        &self.store
    }

    /// Blocks until the pending list changes or `timeout` elapses.
    pub fn wait_for_change(&self, timeout: Duration) {
        let seen = self.bridge.generation();
        if self.state() == SessionState::Searching {
            self.bridge.wait_pending(seen, timeout);
        }
    }

    /// Delivers a batch of labels. Every vid must be pending and appear once;
    /// otherwise nothing is delivered.
    pub fn submit(&self, labels: &[VidLabel]) -> Result<usize, ApiError> {
        let _guard = self.submit_lock.lock();
        if !matches!(self.inner.lock().outcome, Outcome::Running) {
            return Err(ApiError::conflict(format!("session {} no longer accepts labels", self.id)));
        }
        let pending = self.bridge.pending();
        let done = self.bridge.labeled();
        let mut batch = BTreeSet::new();
        for l in labels {
            if done.contains_key(&l.vid) || !batch.insert(l.vid.as_str()) {
                return Err(ApiError::conflict(format!("segment {} was already labeled", l.vid)));
            }
            if !pending.contains(&l.vid) {
                return Err(ApiError::bad_request(format!("segment {} is not pending", l.vid)));
            }
        }
        for l in labels {
            self.bridge.submit(&l.vid, l.label).map_err(|e| match e {
                SubmitError::Duplicate(_) | SubmitError::Closed => ApiError::conflict(e.to_string()),
                SubmitError::NotPending(_) => ApiError::bad_request(e.to_string()),
            })?;
        }
        Ok(labels.len())
    }

    /// The final result, or the error explaining why there is none yet.
    pub fn result(&self) -> Result<Arc<SynthesisResult>, ApiError> {
        use axum::http::StatusCode;
        match &self.inner.lock().outcome {
            Outcome::Finished(r) => Ok(r.clone()),
            Outcome::Running => Err(ApiError::new(StatusCode::TOO_EARLY, "not_finished", "synthesis is still running")),
            Outcome::Aborted { message, .. } => Err(ApiError::new(StatusCode::GONE, "aborted", message.clone())),
        }
    }

    /// Partial progress of an aborted session.
    pub fn partial(&self) -> Option<Arc<SynthesisResult>> {
        match &self.inner.lock().outcome {
            Outcome::Aborted { partial, .. } => partial.clone(),
            _ => None,
        }
    }

    /// Segments not offered for labeling: outside the pool if there is one,
    /// otherwise every segment without a label.
    pub fn held_out(&self, result: &SynthesisResult) -> Vec<String> {
        self.store
            .vids()
            .filter(|v| match &self.pool {
                Some(p) => !p.contains(*v),
                None => !result.labels.contains(v),
            })
            .map(str::to_string)
            .collect()
    }

    pub fn preview(&self, result: &SynthesisResult, rank: usize, vids: Option<Vec<String>>) -> Result<Preview, ApiError> {
        let cand = result
            .top_k
            .get(rank)
            .ok_or_else(|| ApiError::bad_request(format!("rank {rank} is past the {} returned queries", result.top_k.len())))?;
        let vids = vids.unwrap_or_else(|| self.held_out(result));
        let matching = self
            .executor
            .execute(&cand.query, &self.store, &vids)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        Ok(Preview {
            rank,
            query: cand.query.to_string(),
            evaluated: vids.len(),
            matching: matching.into_iter().collect(),
        })
    }
}

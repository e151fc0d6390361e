//! Label sources for synthesis: simulated ground truth, noise injection and
//! a blocking bridge to a human labeler.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::derive_seed;
use crate::dsl::Query;
use crate::executor::{CompiledQuery, ExecError, Executor};
use crate::scene::SegmentStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Pos
        } else {
            Label::Neg
        }
    }

    pub fn is_pos(self) -> bool {
        self == Label::Pos
    }

    pub fn flipped(self) -> Self {
        Self::from_bool(!self.is_pos())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_pos() { "pos" } else { "neg" })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("unknown segment {0}")]
    UnknownVid(String),
    #[error("timed out after {0:?} waiting for labels")]
    Timeout(Duration),
    #[error("labeling was aborted")]
    Aborted,
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Anything that can label segments. Implementations must return the same
/// label for a vid every time they are asked within one session.
pub trait LabelOracle: Send {
    fn label(&mut self, vid: &str) -> Result<Label, OracleError>;

    fn label_batch(&mut self, vids: &[String]) -> Result<Vec<Label>, OracleError> {
        vids.iter().map(|v| self.label(v)).collect()
    }
}

impl<O: LabelOracle + ?Sized> LabelOracle for Box<O> {
    fn label(&mut self, vid: &str) -> Result<Label, OracleError> {
        (**self).label(vid)
    }

    fn label_batch(&mut self, vids: &[String]) -> Result<Vec<Label>, OracleError> {
        (**self).label_batch(vids)
    }
}

/// Labels a segment positive iff the target query matches it.
pub struct GroundTruthOracle {
    target: CompiledQuery,
    store: Arc<SegmentStore>,
    executor: Executor,
    memo: HashMap<String, Label>,
}

impl GroundTruthOracle {
    pub fn new(target: &Query, store: Arc<SegmentStore>, executor: Executor) -> Result<Self, OracleError> {
        Ok(Self {
            target: executor.compile(target)?,
            store,
            executor,
            memo: HashMap::new(),
        })
    }
}

impl LabelOracle for GroundTruthOracle {
    fn label(&mut self, vid: &str) -> Result<Label, OracleError> {
        if let Some(&l) = self.memo.get(vid) {
            return Ok(l);
        }
        let seg = self.store.get(vid).ok_or_else(|| OracleError::UnknownVid(vid.to_string()))?;
        let l = Label::from_bool(self.executor.matches(&self.target, seg));
        self.memo.insert(vid.to_string(), l);
        Ok(l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub fn_rate: f64,
    pub fp_rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// False positives at a tenth of the false-negative rate.
    pub fn tied(fn_rate: f64, seed: u64) -> Self {
        Self { fn_rate, fp_rate: 0.1 * fn_rate, seed }
    }

    pub fn validate(&self) -> Result<(), String> {
        for r in [self.fn_rate, self.fp_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("rate {r} is outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Uniform draw in [0, 1) fixed by `(vid, seed)` alone.
    pub fn draw(&self, vid: &str) -> f64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in vid.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, h)).gen()
    }

    pub fn flips(&self, vid: &str, truth: Label) -> bool {
        let rate = if truth.is_pos() { self.fn_rate } else { self.fp_rate };
        self.draw(vid) < rate
    }
}

/// Flips each vid's label at most once, decided by a hash of the vid.
pub struct NoisyOracle<O> {
    base: O,
    noise: NoiseSpec,
}

impl<O: LabelOracle> NoisyOracle<O> {
    pub fn new(base: O, noise: NoiseSpec) -> Self {
        Self { base, noise }
    }
}

impl<O: LabelOracle> LabelOracle for NoisyOracle<O> {
    fn label(&mut self, vid: &str) -> Result<Label, OracleError> {
        let truth = self.base.label(vid)?;
        Ok(if self.noise.flips(vid, truth) { truth.flipped() } else { truth })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubmitError {
    #[error("segment {0} was already labeled")]
    Duplicate(String),
    #[error("segment {0} is not pending")]
    NotPending(String),
    #[error("labeling is closed")]
    Closed,
}

#[derive(Default)]
struct BridgeState {
    pending: Vec<String>,
    requested: HashSet<String>,
    labels: HashMap<String, Label>,
    preloaded: HashMap<String, Label>,
    closed: bool,
    generation: u64,
}

/// Rendezvous between a blocking synthesis loop and an asynchronous label
/// transport. The loop calls [`LabelBridge::request`]; the transport reads
/// [`LabelBridge::pending`] and answers with [`LabelBridge::submit`].
#[derive(Default)]
pub struct LabelBridge {
    state: Mutex<BridgeState>,
    changed: Condvar,
}

impl LabelBridge {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Labels known in advance, e.g. when replaying an event log. A request
    /// for one of these resolves without waiting.
    pub fn preload(&self, vid: &str, label: Label) {
        self.state.lock().preloaded.insert(vid.to_string(), label);
    }

    pub fn pending(&self) -> Vec<String> {
        self.state.lock().pending.clone()
    }

    /// Counter bumped whenever the pending list changes.
    pub fn generation(&self) -> u64 {
        self.state.lock().generation
    }

    /// Waits until the pending list changes from generation `seen` or
    /// `timeout` elapses; returns the current pending list.
    pub fn wait_pending(&self, seen: u64, timeout: Duration) -> Vec<String> {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock();
        while st.generation == seen && !st.closed {
            if self.changed.wait_until(&mut st, deadline).timed_out() {
                break;
            }
        }
        st.pending.clone()
    }

    pub fn labeled(&self) -> HashMap<String, Label> {
        self.state.lock().labels.clone()
    }

    pub fn submit(&self, vid: &str, label: Label) -> Result<(), SubmitError> {
        let mut st = self.state.lock();
        if st.closed {
            return Err(SubmitError::Closed);
        }
        if st.labels.contains_key(vid) {
            return Err(SubmitError::Duplicate(vid.to_string()));
        }
        let Some(pos) = st.pending.iter().position(|p| p == vid) else {
            return Err(SubmitError::NotPending(vid.to_string()));
        };
        st.pending.remove(pos);
        st.labels.insert(vid.to_string(), label);
        st.generation += 1;
        self.changed.notify_all();
        Ok(())
    }

    /// Wakes every waiter and rejects further submissions.
    pub fn close(&self) {
        let mut st = self.state.lock();
        st.closed = true;
        st.pending.clear();
        st.generation += 1;
        self.changed.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().closed
    }

    /// Publishes `vids` as pending and blocks until all are labeled.
    pub fn request(&self, vids: &[String], timeout: Duration) -> Result<Vec<Label>, OracleError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock();
        if st.closed {
            return Err(OracleError::Aborted);
        }
        let mut added = false;
        for v in vids {
            if st.labels.contains_key(v) || !st.requested.insert(v.clone()) {
                continue;
            }
            if let Some(l) = st.preloaded.remove(v) {
                st.labels.insert(v.clone(), l);
            } else {
                st.pending.push(v.clone());
                added = true;
            }
        }
        if added {
            st.generation += 1;
            self.changed.notify_all();
        }
        loop {
            if st.closed {
                return Err(OracleError::Aborted);
            }
            if vids.iter().all(|v| st.labels.contains_key(v)) {
                return Ok(vids.iter().map(|v| st.labels[v]).collect());
            }
            if self.changed.wait_until(&mut st, deadline).timed_out() {
                let unanswered: Vec<String> = st.pending.drain(..).collect();
                for v in unanswered {
                    st.requested.remove(&v);
                }
                st.generation += 1;
                self.changed.notify_all();
                return Err(OracleError::Timeout(timeout));
            }
        }
    }
}

pub const DEFAULT_LABEL_TIMEOUT: Duration = Duration::from_secs(30 * 60);

/// Blocks the synthesis loop until a human answers through a bridge.
pub struct InteractiveOracle {
    bridge: Arc<LabelBridge>,
    timeout: Duration,
}

impl InteractiveOracle {
    pub fn new(bridge: Arc<LabelBridge>) -> Self {
        Self { bridge, timeout: DEFAULT_LABEL_TIMEOUT }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl LabelOracle for InteractiveOracle {
    fn label(&mut self, vid: &str) -> Result<Label, OracleError> {
        Ok(self.label_batch(&[vid.to_string()])?[0])
    }

    fn label_batch(&mut self, vids: &[String]) -> Result<Vec<Label>, OracleError> {
        self.bridge.request(vids, self.timeout)
    }
}

/// The first `human_quota` labels come from `human`, the rest from `auto`.
pub struct MixedOracle<H, A> {
    human: H,
    auto: A,
    human_quota: usize,
    used: usize,
}

impl<H: LabelOracle, A: LabelOracle> MixedOracle<H, A> {
    pub fn new(human: H, auto: A, human_quota: usize) -> Self {
        Self { human, auto, human_quota, used: 0 }
    }

    pub fn human_labels(&self) -> usize {
        self.used.min(self.human_quota)
    }
}

impl<H: LabelOracle, A: LabelOracle> LabelOracle for MixedOracle<H, A> {
    fn label(&mut self, vid: &str) -> Result<Label, OracleError> {
        Ok(self.label_batch(&[vid.to_string()])?[0])
    }

    fn label_batch(&mut self, vids: &[String]) -> Result<Vec<Label>, OracleError> {
        let split = self.human_quota.saturating_sub(self.used).min(vids.len());
        let mut out = self.human.label_batch(&vids[..split])?;
        out.extend(self.auto.label_batch(&vids[split..])?);
        self.used += vids.len();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GenSpec};
    use crate::dsl::parse;
    use crate::predicates::PredicateRegistry;
    use std::thread;

    struct Fixed(Label);

    impl LabelOracle for Fixed {
        fn label(&mut self, _: &str) -> Result<Label, OracleError> {
            Ok(self.0)
        }
    }

    #[test]
    fn ground_truth_never_matching() {
        let reg = Arc::new(PredicateRegistry::builtin());
        let store = Arc::new(generate(&GenSpec { n_segments: 10, ..GenSpec::default() }));
        let never = parse("(Near(o1, o2), Far(o1, o2))", &reg).unwrap();
        let mut o = GroundTruthOracle::new(&never, store.clone(), Executor::new(reg.clone())).unwrap();
        for v in store.vids() {
            assert_eq!(o.label(v).unwrap(), Label::Neg);
            assert_eq!(o.label(v).unwrap(), Label::Neg);
        }
        assert!(matches!(o.label("missing"), Err(OracleError::UnknownVid(_))));
    }

    #[test]
    fn noise_extremes() {
        let none = NoiseSpec { fn_rate: 0.0, fp_rate: 0.0, seed: 1 };
        let all = NoiseSpec { fn_rate: 1.0, fp_rate: 1.0, seed: 1 };
        for vid in ["a", "b", "seg00001"] {
            for l in [Label::Pos, Label::Neg] {
                assert_eq!(NoisyOracle::new(Fixed(l), none).label(vid).unwrap(), l);
                assert_eq!(NoisyOracle::new(Fixed(l), all).label(vid).unwrap(), l.flipped());
            }
        }
        assert_eq!(NoiseSpec::tied(0.3, 0).fp_rate, 0.1 * 0.3);
        assert!(NoiseSpec { fn_rate: 1.5, fp_rate: 0.0, seed: 0 }.validate().is_err());
    }

    #[test]
    fn noise_is_frozen_per_vid() {
        let spec = NoiseSpec::tied(0.5, 42);
        let mut o = NoisyOracle::new(Fixed(Label::Pos), spec);
        let first: Vec<Label> = (0..50).map(|i| o.label(&format!("v{i}")).unwrap()).collect();
        let again: Vec<Label> = (0..50).rev().map(|i| o.label(&format!("v{i}")).unwrap()).collect();
        assert_eq!(first, again.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn bridge_delivers_in_request_order() {
        let bridge = LabelBridge::new();
        let b2 = bridge.clone();
        let human = thread::spawn(move || {
            let p = b2.wait_pending(0, Duration::from_secs(5));
            assert_eq!(p, vec!["a".to_string(), "b".to_string()]);
            b2.submit("b", Label::Neg).unwrap();
            assert_eq!(b2.submit("b", Label::Pos), Err(SubmitError::Duplicate("b".into())));
            assert_eq!(b2.submit("z", Label::Pos), Err(SubmitError::NotPending("z".into())));
            b2.submit("a", Label::Pos).unwrap();
        });
        let mut o = InteractiveOracle::new(bridge.clone()).with_timeout(Duration::from_secs(5));
        let labels = o.label_batch(&["a".to_string(), "b".to_string()]).unwrap();
        human.join().unwrap();
        assert_eq!(labels, vec![Label::Pos, Label::Neg]);
        assert!(bridge.pending().is_empty());
    }

    #[test]
    fn bridge_times_out() {
        let bridge = LabelBridge::new();
        let mut o = InteractiveOracle::new(bridge.clone()).with_timeout(Duration::from_millis(30));
        assert!(matches!(o.label("x"), Err(OracleError::Timeout(_))));
        assert!(bridge.pending().is_empty());
    }

    #[test]
    fn bridge_preload_and_close() {
        let bridge = LabelBridge::new();
        bridge.preload("p", Label::Pos);
        assert_eq!(bridge.request(&["p".to_string()], Duration::from_millis(10)).unwrap(), vec![Label::Pos]);
        bridge.close();
        assert_eq!(bridge.request(&["q".to_string()], Duration::from_millis(10)), Err(OracleError::Aborted));
        assert_eq!(bridge.submit("q", Label::Pos), Err(SubmitError::Closed));
    }

    #[test]
    fn mixed_counts_both_sources() {
        let mut o = MixedOracle::new(Fixed(Label::Pos), Fixed(Label::Neg), 3);
        let vids: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        let labels = o.label_batch(&vids[..2]).unwrap();
        assert_eq!(labels, vec![Label::Pos; 2]);
        let labels = o.label_batch(&vids[2..]).unwrap();
        assert_eq!(labels, vec![Label::Pos, Label::Neg, Label::Neg]);
        assert_eq!(o.human_labels(), 3);
    }
}

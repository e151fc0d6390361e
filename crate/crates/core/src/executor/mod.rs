//! Query execution over scene-graph segments.
//!
//! [`match_query`] finds the earliest matching event of a query in one
//! segment: for each injective assignment of variables to objects (in
//! lexicographic oid order) it scans frames once per region graph, taking the
//! earliest run of the required length and starting the next graph strictly
//! after it. Replacing any witness's first run by the earliest one keeps the
//! rest of the witness valid, so the greedy chain finds a match iff one
//! exists. Prefix results can be memoized in a [`PrefixCache`].
//!
//! [`match_reference`] is an exhaustive enumerator used as a test oracle and
//! for queries with a window specification.

mod cache;
mod reference;
mod sql;
mod telemetry;

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::dsl::{Query, RegionGraphSpec, MAX_VARS};
use crate::predicates::PredicateRegistry;
use crate::scene::{EventMatch, Fid, Oid, Segment, SegmentStore, TrackIdx};

pub use cache::{PrefixCache, PrefixKey, PrefixResult, DEFAULT_CACHE_CAPACITY};
pub use reference::{match_reference, witnesses, REFERENCE_LIMIT};
pub use sql::emit_sql;
pub use telemetry::{Telemetry, TelemetrySnapshot};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("window specifications are not supported by the optimized executor; use match_reference")]
    WindowUnsupported,
    #[error("unknown predicate {0}")]
    UnknownPredicate(String),
    #[error("unknown segment {0}")]
    UnknownSegment(String),
    #[error("instance too large for exhaustive search ({0} steps)")]
    Capacity(String),
    #[error("the empty query has no SQL form")]
    EmptyQuery,
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone)]
struct CompiledAtom {
    pred: usize,
    vars: [u8; 2],
    arity: usize,
    constant: Option<Arc<str>>,
}

#[derive(Debug, Clone)]
struct CompiledGraph {
    atoms: Vec<CompiledAtom>,
    duration: u32,
}

/// A query resolved against a registry, with its prefix texts precomputed.
#[derive(Debug, Clone)]
pub struct CompiledQuery {
    query: Query,
    graphs: Vec<CompiledGraph>,
    n_vars: usize,
    prefix_texts: Vec<String>,
    prefix_masks: Vec<u32>,
}

impl CompiledQuery {
    pub fn new(query: &Query, registry: &PredicateRegistry) -> Result<Self, ExecError> {
        if query.window.is_some() {
            return Err(ExecError::WindowUnsupported);
        }
        let graphs = query
            .graphs
            .iter()
            .map(|g| compile_graph(g, registry))
            .collect::<Result<Vec<_>, _>>()?;
        let mut prefix_texts = Vec::with_capacity(graphs.len());
        let mut prefix_masks = Vec::with_capacity(graphs.len());
        let mut text = String::new();
        let mut mask = 0;
        for (i, g) in query.graphs.iter().enumerate() {
            if i > 0 {
                text.push_str("; ");
            }
            text.push_str(&g.to_string());
            mask |= g.var_mask();
            prefix_texts.push(text.clone());
            prefix_masks.push(mask);
        }
        Ok(Self {
            query: query.clone(),
            graphs,
            n_vars: query.var_count(),
            prefix_texts,
            prefix_masks,
        })
    }

    pub fn query(&self) -> &Query {
        &self.query
    }
}

fn compile_graph(g: &RegionGraphSpec, registry: &PredicateRegistry) -> Result<CompiledGraph, ExecError> {
    let atoms = g
        .atoms()
        .iter()
        .map(|a| {
            let pred = registry
                .index_of(&a.pred)
                .ok_or_else(|| ExecError::UnknownPredicate(a.pred.to_string()))?;
            let mut vars = [0u8; 2];
            for (slot, v) in vars.iter_mut().zip(&a.vars) {
                *slot = v.0;
            }
            Ok(CompiledAtom {
                pred,
                vars,
                arity: a.vars.len(),
                constant: a.constant.clone(),
            })
        })
        .collect::<Result<Vec<_>, ExecError>>()?;
    Ok(CompiledGraph { atoms, duration: g.duration })
}

/// All injective assignments of `n` variables to `m` tracks, lexicographic.
pub(crate) fn injective_assignments(m: usize, n: usize) -> Vec<Vec<TrackIdx>> {
    fn rec(m: usize, n: usize, cur: &mut Vec<TrackIdx>, used: &mut [bool], out: &mut Vec<Vec<TrackIdx>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for t in 0..m {
            if !used[t] {
                used[t] = true;
                cur.push(t);
                rec(m, n, cur, used, out);
                cur.pop();
                used[t] = false;
            }
        }
    }
    let mut out = Vec::new();
    if n <= m {
        rec(m, n, &mut Vec::with_capacity(n), &mut vec![false; m], &mut out);
    }
    out
}

fn prefix_key(prefix: u32, vid: u32, mask: u32, oids: &[Oid]) -> PrefixKey {
    let mut slots = [Oid::MAX; MAX_VARS];
    for (i, (slot, &oid)) in slots.iter_mut().zip(oids).enumerate() {
        if mask & (1 << i) != 0 {
            *slot = oid;
        }
    }
    PrefixKey { prefix, vid, oids: slots }
}

/// Earliest run of exactly `duration` contiguous frames, at or after `from`,
/// on which every atom holds.
fn earliest_run(
    registry: &PredicateRegistry,
    graph: &CompiledGraph,
    segment: &Segment,
    assignment: &[TrackIdx],
    from: Fid,
    evals: &mut u64,
) -> Option<(Fid, Fid)> {
    let d = graph.duration;
    let mut run = 0u32;
    let mut f = from;
    while f < segment.frame_count {
        if segment.frame_count - f < d - run {
            return None;
        }
        let ok = graph.atoms.iter().all(|a| {
            *evals += 1;
            let tracks = [assignment[a.vars[0] as usize], assignment[a.vars[1] as usize]];
            registry.by_index(a.pred).holds(segment, f, &tracks[..a.arity], a.constant.as_deref())
        });
        if ok {
            run += 1;
            if run == d {
                return Some((f + 1 - d, f));
            }
        } else {
            run = 0;
        }
        f += 1;
    }
    None
}

fn match_compiled(
    registry: &PredicateRegistry,
    cq: &CompiledQuery,
    segment: &Segment,
    cache: Option<&PrefixCache>,
    telemetry: &Telemetry,
) -> Option<EventMatch> {
    let k = cq.graphs.len();
    if k == 0 || cq.n_vars > segment.object_count() {
        return None;
    }
    let ids = cache.map(|c| {
        let pids: Vec<u32> = cq.prefix_texts.iter().map(|t| c.prefix_id(t)).collect();
        (c, c.vid_id(&segment.vid), pids)
    });
    let mut local = TelemetrySnapshot::default();
    let mut found = None;
    let mut oids = Vec::with_capacity(cq.n_vars);
    let mut runs: Vec<(Fid, Fid)> = Vec::with_capacity(k);
    'assign: for assignment in injective_assignments(segment.object_count(), cq.n_vars) {
        oids.clear();
        oids.extend(assignment.iter().map(|&t| segment.track(t).oid));
        runs.clear();
        let mut first = 0;
        if let Some((c, vid, pids)) = &ids {
            for i in (0..k).rev() {
                if let Some(hit) = c.get(&prefix_key(pids[i], *vid, cq.prefix_masks[i], &oids)) {
                    local.cache_hits += 1;
                    match hit.runs {
                        None => continue 'assign,
                        Some(r) => runs.extend_from_slice(&r),
                    }
                    first = i + 1;
                    break;
                }
            }
        }
        for i in first..k {
            let from = runs.last().map_or(0, |r| r.1 + 1);
            let run = earliest_run(registry, &cq.graphs[i], segment, &assignment, from, &mut local.predicate_evals);
            if let Some((c, vid, pids)) = &ids {
                local.cache_misses += 1;
                let value = run.map(|r| {
                    let mut chain = runs.clone();
                    chain.push(r);
                    chain.into_boxed_slice()
                });
                c.insert(prefix_key(pids[i], *vid, cq.prefix_masks[i], &oids), PrefixResult { runs: value });
            }
            match run {
                Some(r) => runs.push(r),
                None => continue 'assign,
            }
        }
        found = Some(EventMatch {
            vid: segment.vid.clone(),
            assignment: oids.clone(),
            runs: runs.clone(),
        });
        break;
    }
    telemetry.add(&local);
    found
}

/// Earliest-greedy match of `q` in `segment`. See the module docs for the
/// witness that is returned.
pub fn match_query(
    q: &Query,
    segment: &Segment,
    registry: &PredicateRegistry,
    cache: Option<&PrefixCache>,
) -> Result<Option<EventMatch>, ExecError> {
    let cq = CompiledQuery::new(q, registry)?;
    Ok(match_compiled(registry, &cq, segment, cache, &Telemetry::default()))
}

/// Shared execution context: registry, optional prefix cache, telemetry and
/// an optional worker pool. Cloning shares all of them.
#[derive(Clone)]
pub struct Executor {
    registry: Arc<PredicateRegistry>,
    cache: Option<Arc<PrefixCache>>,
    telemetry: Arc<Telemetry>,
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl Executor {
    pub fn new(registry: Arc<PredicateRegistry>) -> Self {
        Self {
            registry,
            cache: None,
            telemetry: Arc::new(Telemetry::default()),
            pool: None,
        }
    }

    pub fn with_cache(mut self, capacity: usize) -> Self {
        self.cache = Some(Arc::new(PrefixCache::new(capacity)));
        self
    }

    pub fn with_shared_cache(mut self, cache: Arc<PrefixCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    /// Uses a dedicated pool of `workers` threads; 1 means sequential.
    pub fn with_workers(mut self, workers: usize) -> Result<Self, ExecError> {
        self.pool = if workers <= 1 {
            None
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| ExecError::Pool(e.to_string()))?;
            Some(Arc::new(pool))
        };
        Ok(self)
    }

    pub fn registry(&self) -> &Arc<PredicateRegistry> {
        &self.registry
    }

    pub fn cache(&self) -> Option<&Arc<PrefixCache>> {
        self.cache.as_ref()
    }

    pub fn telemetry(&self) -> &Telemetry {
        &self.telemetry
    }

    pub fn workers(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn compile(&self, q: &Query) -> Result<CompiledQuery, ExecError> {
        CompiledQuery::new(q, &self.registry)
    }

    pub fn find(&self, q: &CompiledQuery, segment: &Segment) -> Option<EventMatch> {
        match_compiled(&self.registry, q, segment, self.cache.as_deref(), &self.telemetry)
    }

    pub fn matches(&self, q: &CompiledQuery, segment: &Segment) -> bool {
        self.find(q, segment).is_some()
    }

    pub fn match_query(&self, q: &Query, segment: &Segment) -> Result<Option<EventMatch>, ExecError> {
        Ok(self.find(&self.compile(q)?, segment))
    }

    /// Runs `f` on the executor's pool, or inline when it has none.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    /// Applies `f` to every item, in parallel on the executor's pool.
    pub fn for_each_mut<T: Send>(&self, items: &mut [T], f: impl Fn(&mut T) + Sync + Send) {
        match &self.pool {
            Some(p) => p.install(|| items.par_iter_mut().for_each(&f)),
            None => items.iter_mut().for_each(f),
        }
    }

    /// Evaluates `q` on every listed segment and returns the matching vids.
    pub fn execute<S: AsRef<str> + Sync>(
        &self,
        q: &Query,
        store: &SegmentStore,
        vids: &[S],
    ) -> Result<BTreeSet<String>, ExecError> {
        let cq = self.compile(q)?;
        let segments = vids
            .iter()
            .map(|v| store.get(v.as_ref()).ok_or_else(|| ExecError::UnknownSegment(v.as_ref().to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.matching(&cq, &segments))
    }

    /// Matching vids among `segments` for a compiled query.
    pub fn matching(&self, cq: &CompiledQuery, segments: &[&Segment]) -> BTreeSet<String> {
        let flags: Vec<bool> = match &self.pool {
            Some(p) => p.install(|| segments.par_iter().map(|s| self.matches(cq, s)).collect()),
            None => segments.iter().map(|s| self.matches(cq, s)).collect(),
        };
        segments
            .iter()
            .zip(flags)
            .filter(|(_, m)| *m)
            .map(|(s, _)| s.vid.clone())
            .collect()
    }
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("cache", &self.cache)
            .field("workers", &self.workers())
            .finish()
    }
}

/// Convenience wrapper: matching vids of `q` over `vids` with `workers`
/// threads and an optional cache.
pub fn execute<S: AsRef<str> + Sync>(
    q: &Query,
    store: &SegmentStore,
    vids: &[S],
    registry: Arc<PredicateRegistry>,
    cache: Option<Arc<PrefixCache>>,
    workers: usize,
) -> Result<BTreeSet<String>, ExecError> {
    let mut ex = Executor::new(registry).with_workers(workers)?;
    if let Some(c) = cache {
        ex = ex.with_shared_cache(c);
    }
    ex.execute(q, store, vids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;
    use crate::scene::{BBox, SegmentBuilder};
    use std::collections::BTreeMap;

    fn reg() -> Arc<PredicateRegistry> {
        Arc::new(PredicateRegistry::builtin())
    }

    /// Two objects 1 and 2; `near` frames put them adjacent, the rest far
    /// apart. Object 1 is always in front.
    fn pair(vid: &str, frames: u32, near: &[u32]) -> Segment {
        let mut b = SegmentBuilder::new(vid, frames, 480, 320);
        b.object(1, "obj", BTreeMap::new()).unwrap();
        b.object(2, "obj", BTreeMap::new()).unwrap();
        for f in 0..frames {
            let x2 = if near.contains(&f) { 130.0 } else { 400.0 };
            b.place(1, f, BBox::new(80.0, 200.0, 120.0, 240.0), 1.0).unwrap();
            b.place(2, f, BBox::new(x2 - 20.0, 200.0, x2 + 20.0, 240.0), 2.0).unwrap();
        }
        b.build().unwrap()
    }

    #[test]
    fn assignments_are_lexicographic() {
        assert_eq!(injective_assignments(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 0], vec![1, 2], vec![2, 0], vec![2, 1]]);
        assert!(injective_assignments(1, 2).is_empty());
        assert_eq!(injective_assignments(2, 0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn near_then_far() {
        let r = reg();
        let q = parse("Near(o1, o2); Far(o1, o2)", &r).unwrap();
        let m = match_query(&q, &pair("a", 10, &[3, 4]), &r, None).unwrap().unwrap();
        assert_eq!(m.assignment, vec![1, 2]);
        assert_eq!(m.runs, vec![(3, 3), (5, 5)]);
        assert!(match_query(&q, &pair("b", 10, &[9]), &r, None).unwrap().is_none());
    }

    #[test]
    fn durations_need_contiguous_runs() {
        let r = reg();
        let q = parse("Duration(Near(o1, o2), 3)", &r).unwrap();
        assert!(match_query(&q, &pair("a", 10, &[1, 2, 4, 5]), &r, None).unwrap().is_none());
        let m = match_query(&q, &pair("a", 10, &[1, 2, 4, 5, 6, 7]), &r, None).unwrap().unwrap();
        assert_eq!(m.runs, vec![(4, 6)]);
    }

    #[test]
    fn window_is_rejected() {
        let r = reg();
        let q = parse("Near(o1, o2)", &r).unwrap().with_window(5);
        assert_eq!(match_query(&q, &pair("a", 4, &[0]), &r, None), Err(ExecError::WindowUnsupported));
    }

    #[test]
    fn too_many_variables_is_no_match() {
        let r = reg();
        let q = parse("(Near(o1, o2), Far(o2, o3))", &r).unwrap();
        assert_eq!(match_query(&q, &pair("a", 4, &[0]), &r, None).unwrap(), None);
        assert_eq!(match_query(&Query::empty(), &pair("a", 4, &[0]), &r, None).unwrap(), None);
    }

    #[test]
    fn cache_is_transparent() {
        let r = reg();
        let ex = Executor::new(r.clone()).with_cache(64);
        let q = parse("Near(o1, o2); Far(o1, o2); FrontOf(o1, o2)", &r).unwrap();
        let s = pair("a", 12, &[2, 3]);
        let cold = ex.match_query(&q, &s).unwrap();
        let before = ex.telemetry().snapshot();
        let warm = ex.match_query(&q, &s).unwrap();
        let delta = ex.telemetry().snapshot().since(&before);
        assert_eq!(cold, warm);
        assert_eq!(cold, match_query(&q, &s, &r, None).unwrap());
        assert_eq!(delta.predicate_evals, 0);
        assert_eq!(delta.cache_hits, 1);
    }

    #[test]
    fn parallel_execute_is_deterministic() {
        let r = reg();
        let segs: Vec<Segment> = (0..20).map(|i| pair(&format!("v{i:02}"), 8, &[(i % 9) as u32])).collect();
        let store = SegmentStore::from_segments(segs).unwrap();
        let vids: Vec<&str> = store.vids().collect();
        let q = parse("Near(o1, o2); Far(o1, o2)", &r).unwrap();
        let one = execute(&q, &store, &vids, r.clone(), None, 1).unwrap();
        let four = execute(&q, &store, &vids, r.clone(), Some(Arc::new(PrefixCache::new(16))), 4).unwrap();
        assert_eq!(one, four);
        assert_eq!(one.len(), 16);
        assert!(execute(&q, &store, &Vec::<String>::new(), r.clone(), None, 1).unwrap().is_empty());
        assert!(matches!(execute(&q, &store, &["nope"], r, None, 1), Err(ExecError::UnknownSegment(_))));
    }
}

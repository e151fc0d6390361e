//! The event query language.
//!
//! A query is an ordered sequence of region graphs separated by `;`. Each
//! region graph is a conjunction of predicate atoms over object variables
//! `o1, o2, ...` with a minimum duration in contiguous frames:
//!
//! ```text
//! Duration(Far(o1, o2), 5); (Near(o1, o2), Bottom(o1)); Far(o1, o2)
//! ```
//!
//! The text form is the interchange format used by the CLI, the session API
//! and benchmark files. It has no syntax for window specifications; a window
//! can only be attached programmatically with [`Query::with_window`].

mod canonical;
mod parse;

use std::fmt;
use std::sync::Arc;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predicates::{Arity, PredicateRegistry};

pub use canonical::{canonical, canonical_form, permutations};
pub use parse::{parse, parse_with_limit};

/// Upper bound on distinct variables in one query.
pub const MAX_VARS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown predicate {name} at {pos}")]
    UnknownPredicate { name: String, pos: usize },
    #[error("{name} at {pos} takes {expected} variable(s), got {got}")]
    Arity { name: String, pos: usize, expected: usize, got: usize },
    #[error("{name} at {pos}: {message}")]
    Constant { name: String, pos: usize, message: String },
    #[error("variable o{var} at {pos} exceeds the limit of {max} variables")]
    VariableLimit { var: usize, max: usize, pos: usize },
    #[error("{name} at {pos} repeats a variable")]
    RepeatedVariable { name: String, pos: usize },
    #[error("variables must be numbered o1..oN without gaps; o{missing} is unused")]
    VariableGap { missing: usize },
    #[error("duration must be at least 1")]
    Duration,
    #[error("query violates search bounds: {0}")]
    Bounds(String),
}

/// An object variable. Zero-based internally, printed one-based (`o1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var(pub u8);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "o{}", self.0 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PredicateAtom {
    pub pred: Arc<str>,
    pub vars: Vec<Var>,
    pub constant: Option<Arc<str>>,
}

impl PredicateAtom {
    pub fn new(pred: &str, vars: &[u8], constant: Option<&str>) -> Self {
        Self {
            pred: Arc::from(pred),
            vars: vars.iter().map(|&v| Var(v)).collect(),
            constant: constant.map(Arc::from),
        }
    }

    fn renamed(&self, perm: &[u8]) -> Self {
        Self {
            pred: self.pred.clone(),
            vars: self.vars.iter().map(|v| Var(perm[v.index()])).collect(),
            constant: self.constant.clone(),
        }
    }
}

impl fmt::Display for PredicateAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.pred)?;
        for (i, v) in self.vars.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}")?;
        }
        if let Some(c) = &self.constant {
            write!(f, ", '{c}'")?;
        }
        f.write_str(")")
    }
}

/// A conjunction of atoms that must hold for at least `duration` contiguous
/// frames. Atoms are kept sorted and free of duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegionGraphSpec {
    atoms: Vec<PredicateAtom>,
    pub duration: u32,
}

impl RegionGraphSpec {
    pub fn new(mut atoms: Vec<PredicateAtom>, duration: u32) -> Self {
        atoms.sort();
        atoms.dedup();
        Self { atoms, duration: duration.max(1) }
    }

    pub fn atom(atom: PredicateAtom) -> Self {
        Self { atoms: vec![atom], duration: 1 }
    }

    pub fn atoms(&self) -> &[PredicateAtom] {
        &self.atoms
    }

    pub fn contains(&self, atom: &PredicateAtom) -> bool {
        self.atoms.binary_search(atom).is_ok()
    }

    /// Adds an atom, keeping order. Returns false if it was already present.
    pub fn insert(&mut self, atom: PredicateAtom) -> bool {
        match self.atoms.binary_search(&atom) {
            Ok(_) => false,
            Err(i) => {
                self.atoms.insert(i, atom);
                true
            }
        }
    }

    /// Bitmask of variables referenced by this graph.
    pub fn var_mask(&self) -> u32 {
        self.atoms.iter().flat_map(|a| a.vars.iter()).fold(0, |m, v| m | (1 << v.0))
    }

    fn renamed(&self, perm: &[u8]) -> Self {
        Self::new(self.atoms.iter().map(|a| a.renamed(perm)).collect(), self.duration)
    }
}

impl fmt::Display for RegionGraphSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body = if self.atoms.len() == 1 {
            self.atoms[0].to_string()
        } else {
            let parts: Vec<String> = self.atoms.iter().map(ToString::to_string).collect();
            format!("({})", parts.join(", "))
        };
        if self.duration > 1 {
            write!(f, "Duration({body}, {})", self.duration)
        } else {
            f.write_str(&body)
        }
    }
}

/// A sequence of region graphs plus an optional window (maximum frame span
/// from the first graph's start to the last graph's end, exclusive).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Query {
    pub graphs: Vec<RegionGraphSpec>,
    pub window: Option<u32>,
}

impl Query {
    /// The empty query, root of the search. It matches nothing.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(graphs: Vec<RegionGraphSpec>) -> Self {
        Self { graphs, window: None }
    }

    pub fn with_window(mut self, window: u32) -> Self {
        self.window = Some(window);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn atom_count(&self) -> usize {
        self.graphs.iter().map(|g| g.atoms.len()).sum()
    }

    pub fn var_mask(&self) -> u32 {
        self.graphs.iter().fold(0, |m, g| m | g.var_mask())
    }

    /// Number of variables, assuming prefix numbering.
    pub fn var_count(&self) -> usize {
        32 - self.var_mask().leading_zeros() as usize
    }

    /// Whether the used variables are exactly `o1..oj` for some `j`.
    pub fn vars_form_prefix(&self) -> bool {
        let m = self.var_mask();
        m & (m + 1) == 0
    }

    pub fn parse(text: &str, registry: &PredicateRegistry) -> Result<Self, DslError> {
        parse(text, registry)
    }

    /// Checks the query against a search configuration: caps on graphs,
    /// atoms and variables, and the allowed duration values.
    pub fn check_bounds(&self, config: &SearchConfig) -> Result<(), DslError> {
        if self.graphs.len() > config.n_g {
            return Err(DslError::Bounds(format!("{} region graphs > n_g = {}", self.graphs.len(), config.n_g)));
        }
        if self.atom_count() > config.n_p {
            return Err(DslError::Bounds(format!("{} predicates > n_p = {}", self.atom_count(), config.n_p)));
        }
        if self.var_count() > config.n_v {
            return Err(DslError::Bounds(format!("{} variables > n_v = {}", self.var_count(), config.n_v)));
        }
        for g in &self.graphs {
            if g.duration != 1 && !config.duration_values.contains(&g.duration) {
                return Err(DslError::Bounds(format!("duration {} is not an allowed value", g.duration)));
            }
        }
        Ok(())
    }

    pub(crate) fn renamed(&self, perm: &[u8]) -> Self {
        Self {
            graphs: self.graphs.iter().map(|g| g.renamed(perm)).collect(),
            window: self.window,
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, g) in self.graphs.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

/// Queries serialize as their text; the window, if any, is dropped.
impl Serialize for Query {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Weights of the query complexity term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Alpha {
    pub atoms: f64,
    pub duration: f64,
    pub interaction: f64,
}

impl Alpha {
    pub const fn new(atoms: f64, duration: f64, interaction: f64) -> Self {
        Self { atoms, duration, interaction }
    }
}

impl Default for Alpha {
    fn default() -> Self {
        Self::new(1.0, 1.0, 0.1)
    }
}

impl From<[f64; 3]> for Alpha {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<Alpha> for [f64; 3] {
    fn from(a: Alpha) -> Self {
        [a.atoms, a.duration, a.interaction]
    }
}

/// Duration scale of a graph: `floor(duration / granularity) + 1`, so an
/// unconstrained graph scores 1 and each refinement step adds 1.
pub fn duration_scale(duration: u32, granularity: u32) -> u32 {
    duration / granularity.max(1) + 1
}

/// Complexity `sum_i a1*n_p + a2*n_d + a3*n_d*n_p` over region graphs.
pub fn complexity(q: &Query, alpha: Alpha, granularity: u32) -> f64 {
    q.graphs
        .iter()
        .map(|g| {
            let np = g.atoms.len() as f64;
            let nd = duration_scale(g.duration, granularity) as f64;
            alpha.atoms * np + alpha.duration * nd + alpha.interaction * nd * np
        })
        .sum()
}

/// Bounds of the synthesis search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Maximum number of region graphs.
    pub n_g: usize,
    /// Maximum number of predicates in a query.
    pub n_p: usize,
    /// Maximum number of distinct variables.
    pub n_v: usize,
    /// Allowed duration thresholds, strictly increasing. Empty disables
    /// duration refinement.
    pub duration_values: Vec<u32>,
    pub duration_granularity: u32,
    /// Names of registry predicates the synthesizer may use.
    pub predicate_pool: Vec<String>,
}

pub const TRAJECTORY_POOL: [&str; 10] = [
    "Near", "Far", "LeftOf", "RightOf", "FrontOf", "Behind", "Left", "Right", "Top", "Bottom",
];

impl SearchConfig {
    /// Two-object trajectory queries: up to 5 predicates across 3 graphs,
    /// spatial predicates only.
    pub fn trajectory() -> Self {
        Self {
            n_g: 3,
            n_p: 5,
            n_v: 2,
            duration_values: vec![5, 10, 15],
            duration_granularity: 5,
            predicate_pool: TRAJECTORY_POOL.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// General scene-graph queries over three objects with attributes.
    pub fn scene_graph() -> Self {
        Self {
            n_g: 3,
            n_p: 7,
            n_v: 3,
            duration_values: vec![5, 10, 15],
            duration_granularity: 5,
            predicate_pool: crate::predicates::builtin_registry().into_iter().map(|d| d.name).collect(),
        }
    }

    pub fn without_durations(mut self) -> Self {
        self.duration_values.clear();
        self
    }

    pub fn with_pool(mut self, pool: &[&str]) -> Self {
        self.predicate_pool = pool.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn n_d(&self) -> usize {
        self.duration_values.len()
    }

    pub fn validate(&self, registry: &PredicateRegistry) -> Result<(), DslError> {
        if self.n_g == 0 || self.n_p == 0 || self.n_v == 0 || self.duration_granularity == 0 {
            return Err(DslError::Bounds("n_g, n_p, n_v and granularity must be positive".into()));
        }
        if self.n_v > MAX_VARS {
            return Err(DslError::Bounds(format!("n_v is limited to {MAX_VARS}")));
        }
        if self.duration_values.first().is_some_and(|&d| d <= 1)
            || self.duration_values.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(DslError::Bounds("duration values must be > 1 and strictly increasing".into()));
        }
        for name in &self.predicate_pool {
            if registry.get(name).is_none() {
                return Err(DslError::UnknownPredicate { name: name.clone(), pos: 0 });
            }
        }
        Ok(())
    }

    /// The next value in the chain `1 -> duration_values[0] -> ...`.
    pub fn next_duration(&self, current: u32) -> Option<u32> {
        self.duration_values.iter().copied().find(|&d| d > current)
    }

    /// `(m1, m2)`: unary plus attribute-valued functions, and binary ones.
    /// Attribute predicates count once per constant.
    pub fn predicate_counts(&self, registry: &PredicateRegistry) -> (usize, usize) {
        let mut m1 = 0;
        let mut m2 = 0;
        for def in self.predicate_pool.iter().filter_map(|n| registry.get(n)) {
            match def.arity {
                Arity::Unary => m1 += def.instantiations(),
                Arity::Binary => m2 += 1,
            }
        }
        (m1, m2)
    }

    pub fn search_space_bound(&self, registry: &PredicateRegistry) -> BigUint {
        let (m1, m2) = self.predicate_counts(registry);
        search_space_bound(SpaceParams {
            n_g: self.n_g,
            n_p: self.n_p,
            n_v: self.n_v,
            n_d: self.n_d(),
            m1,
            m2,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceParams {
    pub n_g: usize,
    pub n_p: usize,
    pub n_v: usize,
    pub n_d: usize,
    pub m1: usize,
    pub m2: usize,
}

/// `(n_g (n_v m1 + n_v^2 m2))^n_p * n_d^n_g`, exactly.
pub fn search_space_bound(p: SpaceParams) -> BigUint {
    let base = BigUint::from(p.n_g) * (BigUint::from(p.n_v * p.m1) + BigUint::from(p.n_v * p.n_v * p.m2));
    base.pow(p.n_p as u32) * BigUint::from(p.n_d).pow(p.n_g as u32)
}

//! Query expansion: graph construction (add an atom to a graph), sequence
//! construction (insert a one-atom graph) and duration refinement.

use std::collections::BTreeMap;

use crate::dsl::{canonical, PredicateAtom, Query, RegionGraphSpec, SearchConfig};
use crate::predicates::{Arity, PredicateRegistry};

/// Every atom the configuration allows: each pool predicate over every
/// ordered tuple of distinct variables below `n_v`, and every constant.
pub fn atom_instantiations(config: &SearchConfig, registry: &PredicateRegistry) -> Vec<PredicateAtom> {
    let n = config.n_v.min(crate::dsl::MAX_VARS) as u8;
    let mut out = Vec::new();
    for def in config.predicate_pool.iter().filter_map(|p| registry.get(p)) {
        let tuples: Vec<Vec<u8>> = match def.arity {
            Arity::Unary => (0..n).map(|a| vec![a]).collect(),
            Arity::Binary => (0..n)
                .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| vec![a, b]))
                .collect(),
        };
        for vars in &tuples {
            if def.needs_constant() {
                for c in &def.const_domain {
                    out.push(PredicateAtom::new(&def.name, vars, Some(c)));
                }
            } else {
                out.push(PredicateAtom::new(&def.name, vars, None));
            }
        }
    }
    out.sort();
    out
}

/// Precomputed atom list for repeated expansion under one configuration.
#[derive(Debug, Clone)]
pub struct Expander {
    config: SearchConfig,
    atoms: Vec<PredicateAtom>,
}

impl Expander {
    pub fn new(config: &SearchConfig, registry: &PredicateRegistry) -> Self {
        Self {
            config: config.clone(),
            atoms: atom_instantiations(config, registry),
        }
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn atoms(&self) -> &[PredicateAtom] {
        &self.atoms
    }

    /// Children of `q` keyed by canonical key. When several children share a
    /// key the first one generated is kept.
    pub fn expand(&self, q: &Query) -> BTreeMap<String, Query> {
        let mut out = BTreeMap::new();
        let cfg = &self.config;
        let mut keep = |child: Query| {
            if child.vars_form_prefix() && child.var_count() <= cfg.n_v {
                out.entry(canonical(&child)).or_insert(child);
            }
        };
        if q.atom_count() < cfg.n_p {
            // graph construction
            for (i, g) in q.graphs.iter().enumerate() {
                for atom in &self.atoms {
                    if g.contains(atom) {
                        continue;
                    }
                    let mut child = q.clone();
                    child.graphs[i].insert(atom.clone());
                    keep(child);
                }
            }
            // sequence construction
            if q.graphs.len() < cfg.n_g {
                for pos in 0..=q.graphs.len() {
                    for atom in &self.atoms {
                        let mut child = q.clone();
                        child.graphs.insert(pos, RegionGraphSpec::atom(atom.clone()));
                        keep(child);
                    }
                }
            }
        }
        // duration refinement
        for (i, g) in q.graphs.iter().enumerate() {
            if let Some(d) = cfg.next_duration(g.duration) {
                let mut child = q.clone();
                child.graphs[i].duration = d;
                keep(child);
            }
        }
        out
    }
}

/// One-shot expansion of `q`.
pub fn expand_query(q: &Query, config: &SearchConfig, registry: &PredicateRegistry) -> Vec<Query> {
    Expander::new(config, registry).expand(q).into_values().collect()
}

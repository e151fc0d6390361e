//! Exhaustive matcher. It evaluates atoms against the materialized
//! `Relationships` and `Attributes` views of each frame and enumerates every
//! run tuple, so it shares no search logic with the greedy executor.

use std::collections::HashSet;

use super::{injective_assignments, ExecError};
use crate::dsl::{PredicateAtom, Query};
use crate::predicates::{location_attributes_at, relationships_at, Geometry, PredicateRegistry};
use crate::scene::{EventMatch, Fid, Oid, Segment};

/// Largest `frame_count^(2·graphs) · assignments` accepted by the reference.
pub const REFERENCE_LIMIT: f64 = 1e8;

/// Facts true at one frame.
struct FrameFacts {
    relationships: HashSet<(String, Oid, Oid)>,
    attributes: HashSet<(Oid, String, String)>,
}

fn frame_facts(registry: &PredicateRegistry, segment: &Segment) -> Vec<FrameFacts> {
    (0..segment.frame_count)
        .map(|fid| {
            let relationships = relationships_at(registry, segment, fid)
                .into_iter()
                .map(|r| (r.pid.to_string(), r.oid_sub, r.oid_tar))
                .collect();
            let mut attributes: HashSet<(Oid, String, String)> = location_attributes_at(registry, segment, fid)
                .into_iter()
                .map(|a| (a.oid, a.key, a.value))
                .collect();
            for a in segment.property_attributes_at(fid).expect("fid in range") {
                attributes.insert((a.oid, a.key, a.value));
            }
            FrameFacts { relationships, attributes }
        })
        .collect()
}

fn atom_holds(registry: &PredicateRegistry, facts: &FrameFacts, atom: &PredicateAtom, oids: &[Oid]) -> Result<bool, ExecError> {
    let def = registry
        .get(&atom.pred)
        .ok_or_else(|| ExecError::UnknownPredicate(atom.pred.to_string()))?;
    let a = oids[atom.vars[0].index()];
    Ok(match &def.geometry {
        Geometry::Property { key } => {
            let c = atom.constant.as_deref().unwrap_or_default();
            facts.attributes.contains(&(a, key.clone(), c.to_string()))
        }
        _ if def.is_location() => facts.attributes.contains(&(a, "location".to_string(), def.name.to_lowercase())),
        _ => {
            let b = oids[atom.vars[1].index()];
            facts.relationships.contains(&(def.name.clone(), a, b))
        }
    })
}

/// `truth[g][f]`: whether every atom of graph `g` holds at frame `f`.
fn truth_table(registry: &PredicateRegistry, q: &Query, facts: &[FrameFacts], oids: &[Oid]) -> Result<Vec<Vec<bool>>, ExecError> {
    q.graphs
        .iter()
        .map(|g| {
            facts
                .iter()
                .map(|ff| {
                    for atom in g.atoms() {
                        if !atom_holds(registry, ff, atom, oids)? {
                            return Ok(false);
                        }
                    }
                    Ok(true)
                })
                .collect()
        })
        .collect()
}

/// Calls `visit` with every run tuple satisfying `truth` and the durations,
/// stopping when it returns true.
type RunVisitor<'a> = dyn FnMut(&[(Fid, Fid)]) -> bool + 'a;

fn enumerate_runs(
    truth: &[Vec<bool>],
    durations: &[u32],
    window: Option<u32>,
    prefix: &mut Vec<(Fid, Fid)>,
    visit: &mut RunVisitor,
) -> bool {
    let i = prefix.len();
    if i == truth.len() {
        if let Some(w) = window {
            let span = prefix[i - 1].1 - prefix[0].0;
            if span >= w {
                return false;
            }
        }
        return visit(prefix);
    }
    let frames = truth[i].len() as Fid;
    let lo = prefix.last().map_or(0, |r| r.1 + 1);
    for s in lo..frames {
        for e in s..frames {
            if !truth[i][e as usize] {
                break;
            }
            if e - s + 1 < durations[i] {
                continue;
            }
            prefix.push((s, e));
            let stop = enumerate_runs(truth, durations, window, prefix, visit);
            prefix.pop();
            if stop {
                return true;
            }
        }
    }
    false
}

fn check_capacity(q: &Query, segment: &Segment, assignments: usize) -> Result<(), ExecError> {
    let steps = (segment.frame_count as f64).powi(2 * q.graphs.len() as i32) * assignments as f64;
    if steps > REFERENCE_LIMIT {
        return Err(ExecError::Capacity(format!("{steps:.3e}")));
    }
    Ok(())
}

/// Exhaustive match, honouring a window specification if present: the last
/// run must end fewer than `w` frames after the first run starts.
pub fn match_reference(q: &Query, segment: &Segment, registry: &PredicateRegistry) -> Result<Option<EventMatch>, ExecError> {
    if q.is_empty() {
        return Ok(None);
    }
    let assignments = injective_assignments(segment.object_count(), q.var_count());
    check_capacity(q, segment, assignments.len())?;
    let facts = frame_facts(registry, segment);
    let durations: Vec<u32> = q.graphs.iter().map(|g| g.duration).collect();
    for assignment in assignments {
        let oids: Vec<Oid> = assignment.iter().map(|&t| segment.track(t).oid).collect();
        let truth = truth_table(registry, q, &facts, &oids)?;
        let mut found = None;
        enumerate_runs(&truth, &durations, q.window, &mut Vec::new(), &mut |runs| {
            found = Some(runs.to_vec());
            true
        });
        if let Some(runs) = found {
            return Ok(Some(EventMatch {
                vid: segment.vid.clone(),
                assignment: oids,
                runs,
            }));
        }
    }
    Ok(None)
}

/// Every witness run tuple of `q` under the assignment `oids` (variable `i`
/// bound to `oids[i]`), in lexicographic order.
pub fn witnesses(q: &Query, segment: &Segment, registry: &PredicateRegistry, oids: &[Oid]) -> Result<Vec<Vec<(Fid, Fid)>>, ExecError> {
    if q.is_empty() {
        return Ok(Vec::new());
    }
    check_capacity(q, segment, 1)?;
    let facts = frame_facts(registry, segment);
    let durations: Vec<u32> = q.graphs.iter().map(|g| g.duration).collect();
    let truth = truth_table(registry, q, &facts, oids)?;
    let mut out = Vec::new();
    enumerate_runs(&truth, &durations, q.window, &mut Vec::new(), &mut |runs| {
        out.push(runs.to_vec());
        false
    });
    Ok(out)
}

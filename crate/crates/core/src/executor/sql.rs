//! SQL text for a query over the relational view
//! `Objects(vid, fid, oid, cid, x1, y1, x2, y2, depth)` and
//! `Attributes(vid, fid, oid, key, value)`.
//!
//! Every region graph `i` gets a base view `g{i}` of the frames and object
//! tuples satisfying its atoms. A windowed view pairs each row with the frame
//! `d - 1` rows later in the same partition, an iterated view keeps the
//! earliest qualifying end frame per object tuple, and from the second graph
//! on a filtered view keeps only rows strictly after the previous graph's
//! earliest end. Graphs with duration 1 skip the windowed view. Spatial
//! predicates are user-defined functions over bounding boxes and depth.

use std::fmt::Write;

use super::ExecError;
use crate::dsl::{PredicateAtom, Query, RegionGraphSpec};
use crate::predicates::{Geometry, PredicateRegistry};

fn var_list(mask: u32) -> Vec<usize> {
    (0..32).filter(|i| mask & (1 << i) != 0).map(|i| i + 1).collect()
}

fn cols(vars: &[usize], table: Option<&str>) -> String {
    vars.iter()
        .map(|v| match table {
            Some(t) => format!("{t}.oid{v}"),
            None => format!("oid{v}"),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn bbox_args(v: usize) -> String {
    format!("o{v}.x1, o{v}.y1, o{v}.x2, o{v}.y2")
}

fn atom_condition(atom: &PredicateAtom, registry: &PredicateRegistry, prop_alias: &mut usize, from: &mut Vec<String>) -> Result<String, ExecError> {
    let def = registry
        .get(&atom.pred)
        .ok_or_else(|| ExecError::UnknownPredicate(atom.pred.to_string()))?;
    let a = atom.vars[0].index() + 1;
    Ok(match &def.geometry {
        Geometry::Property { key } => {
            *prop_alias += 1;
            let p = format!("p{prop_alias}");
            from.push(format!("Attributes {p}"));
            let value = atom.constant.as_deref().unwrap_or_default().replace('\'', "''");
            format!(
                "{p}.vid = o{a}.vid AND {p}.fid = o{a}.fid AND {p}.oid = o{a}.oid AND {p}.key = '{key}' AND {p}.value = '{value}'"
            )
        }
        _ if def.is_location() => format!("{}({})", def.name, bbox_args(a)),
        _ => {
            let b = atom.vars[1].index() + 1;
            format!("{}({}, o{a}.depth, {}, o{b}.depth)", def.name, bbox_args(a), bbox_args(b))
        }
    })
}

fn base_view(out: &mut String, i: usize, g: &RegionGraphSpec, registry: &PredicateRegistry) -> Result<(), ExecError> {
    let vars = var_list(g.var_mask());
    let first = vars[0];
    let mut from: Vec<String> = vars.iter().map(|v| format!("Objects o{v}")).collect();
    let mut conds = Vec::new();
    for &v in &vars[1..] {
        conds.push(format!("o{first}.vid = o{v}.vid AND o{first}.fid = o{v}.fid"));
    }
    for (x, &a) in vars.iter().enumerate() {
        for &b in &vars[x + 1..] {
            conds.push(format!("o{a}.oid <> o{b}.oid"));
        }
    }
    let mut props = 0;
    for atom in g.atoms() {
        conds.push(atom_condition(atom, registry, &mut props, &mut from)?);
    }
    let select: Vec<String> = vars.iter().map(|v| format!("o{v}.oid AS oid{v}")).collect();
    writeln!(out, "CREATE VIEW g{i} AS (").unwrap();
    writeln!(out, "    SELECT o{first}.vid, o{first}.fid, {}", select.join(", ")).unwrap();
    writeln!(out, "    FROM {}", from.join(", ")).unwrap();
    writeln!(out, "    WHERE {}", conds.join("\n        AND ")).unwrap();
    writeln!(out, ");").unwrap();
    Ok(())
}

/// Emits the view chain for `q`, ending in `SELECT DISTINCT vid`.
pub fn emit_sql(q: &Query, registry: &PredicateRegistry) -> Result<String, ExecError> {
    if q.window.is_some() {
        return Err(ExecError::WindowUnsupported);
    }
    if q.is_empty() {
        return Err(ExecError::EmptyQuery);
    }
    let mut out = String::new();
    let mut bound = 0u32;
    for (idx, g) in q.graphs.iter().enumerate() {
        let i = idx + 1;
        base_view(&mut out, i, g, registry)?;
        let mut source = format!("g{i}");
        if i > 1 {
            let prev = var_list(bound);
            let own = var_list(g.var_mask());
            let mut select = vec!["t1.vid".to_string(), "t2.fid".to_string()];
            let mut conds = vec!["t1.vid = t2.vid".to_string()];
            for v in var_list(bound | g.var_mask()) {
                if bound & (1 << (v - 1)) != 0 {
                    select.push(format!("t1.oid{v}"));
                    if own.contains(&v) {
                        conds.push(format!("t1.oid{v} = t2.oid{v}"));
                    }
                } else {
                    select.push(format!("t2.oid{v}"));
                    for &p in &prev {
                        conds.push(format!("t2.oid{v} <> t1.oid{p}"));
                    }
                }
            }
            conds.push("t1.fid < t2.fid".to_string());
            writeln!(out, "CREATE VIEW g{i}_filtered AS (").unwrap();
            writeln!(out, "    SELECT {}", select.join(", ")).unwrap();
            writeln!(out, "    FROM g{}_iterated t1, g{i} t2", i - 1).unwrap();
            writeln!(out, "    WHERE {}", conds.join("\n        AND ")).unwrap();
            writeln!(out, ");").unwrap();
            source = format!("g{i}_filtered");
        }
        bound |= g.var_mask();
        let oids = cols(&var_list(bound), None);
        if g.duration > 1 {
            let lag = g.duration - 1;
            writeln!(out, "CREATE VIEW g{i}_windowed AS (").unwrap();
            writeln!(out, "    SELECT vid, fid, {oids},").unwrap();
            writeln!(out, "        lead(fid, {lag}, 0) OVER (PARTITION BY vid, {oids} ORDER BY fid) AS fid_offset").unwrap();
            writeln!(out, "    FROM {source}").unwrap();
            writeln!(out, ");").unwrap();
            writeln!(out, "CREATE VIEW g{i}_iterated AS (").unwrap();
            writeln!(out, "    SELECT vid, min(fid_offset) AS fid, {oids}").unwrap();
            writeln!(out, "    FROM g{i}_windowed").unwrap();
            writeln!(out, "    WHERE fid_offset = fid + {lag}").unwrap();
            writeln!(out, "    GROUP BY vid, {oids}").unwrap();
            writeln!(out, ");").unwrap();
        } else {
            writeln!(out, "CREATE VIEW g{i}_iterated AS (").unwrap();
            writeln!(out, "    SELECT vid, min(fid) AS fid, {oids}").unwrap();
            writeln!(out, "    FROM {source}").unwrap();
            writeln!(out, "    GROUP BY vid, {oids}").unwrap();
            writeln!(out, ");").unwrap();
        }
    }
    writeln!(out, "SELECT DISTINCT vid FROM g{}_iterated;", q.graphs.len()).unwrap();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;

    #[test]
    fn unit_duration_has_no_window() {
        let r = PredicateRegistry::builtin();
        let sql = emit_sql(&parse("(Near(o1, o2), Bottom(o1))", &r).unwrap(), &r).unwrap();
        assert!(!sql.contains("lead("));
        assert!(!sql.contains("_windowed"));
        assert!(sql.contains("Bottom(o1.x1, o1.y1, o1.x2, o1.y2)"));
        assert!(sql.ends_with("SELECT DISTINCT vid FROM g1_iterated;\n"));
    }

    #[test]
    fn durations_use_lead() {
        let r = PredicateRegistry::builtin();
        let sql = emit_sql(&parse("Duration(Far(o1, o2), 5); Near(o1, o2)", &r).unwrap(), &r).unwrap();
        assert!(sql.contains("lead(fid, 4, 0) OVER (PARTITION BY vid, oid1, oid2 ORDER BY fid)"));
        assert!(sql.contains("WHERE fid_offset = fid + 4"));
        assert!(sql.contains("t1.fid < t2.fid"));
    }

    #[test]
    fn new_variables_stay_injective() {
        let r = PredicateRegistry::builtin();
        let sql = emit_sql(&parse("Left(o1); (Near(o1, o2), Color(o2, 'red'))", &r).unwrap(), &r).unwrap();
        assert!(sql.contains("t2.oid2 <> t1.oid1"));
        assert!(sql.contains("p1.key = 'color' AND p1.value = 'red'"));
    }

    #[test]
    fn rejects_window_and_empty() {
        let r = PredicateRegistry::builtin();
        let q = parse("Near(o1, o2)", &r).unwrap().with_window(3);
        assert_eq!(emit_sql(&q, &r), Err(ExecError::WindowUnsupported));
        assert_eq!(emit_sql(&Query::empty(), &r), Err(ExecError::EmptyQuery));
    }
}

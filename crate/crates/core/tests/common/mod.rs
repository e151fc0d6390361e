#![allow(dead_code)]

use proptest::prelude::*;
use vqbe_core::dsl::{PredicateAtom, Query, RegionGraphSpec};
use vqbe_core::{BBox, Segment, SegmentBuilder};

pub const COLORS: [&str; 3] = ["red", "blue", "cyan"];

/// One object: its colour and, per frame, a grid cell and depth, or nothing
/// when the object is absent.
#[derive(Debug, Clone)]
pub struct ObjSpec {
    pub color: &'static str,
    pub frames: Vec<Option<(u8, u8, u8)>>,
}

/// Centres on a coarse grid so that Near, Far and the half-planes all occur.
const XS: [f64; 5] = [60.0, 100.0, 230.0, 380.0, 420.0];
const YS: [f64; 3] = [60.0, 100.0, 250.0];

pub fn build_segment(vid: &str, objs: &[ObjSpec]) -> Segment {
    let frames = objs[0].frames.len() as u32;
    let mut b = SegmentBuilder::new(vid, frames, 480, 320);
    for (i, o) in objs.iter().enumerate() {
        let oid = 10 + i as u32;
        let props = [("color".to_string(), o.color.to_string())];
        b.object(oid, "obj", props).unwrap();
        for (f, cell) in o.frames.iter().enumerate() {
            if let Some((x, y, d)) = cell {
                let (cx, cy) = (XS[*x as usize], YS[*y as usize]);
                let depth = 1.0 + *d as f64 + i as f64 * 0.1;
                b.place(oid, f as u32, BBox::new(cx - 25.0, cy - 25.0, cx + 25.0, cy + 25.0), depth).unwrap();
            }
        }
    }
    b.build().unwrap()
}

fn arb_cell() -> impl Strategy<Value = Option<(u8, u8, u8)>> {
    prop_oneof![
        1 => Just(None),
        12 => (0u8..5, 0u8..3, 0u8..3).prop_map(Some),
    ]
}

/// Segments with 1 to `max_frames` frames and 1 to `max_objects` objects.
/// Every object appears in frame 0 so that the builder accepts it.
pub fn arb_segment(max_frames: usize, max_objects: usize) -> impl Strategy<Value = Segment> {
    (1..=max_frames, 1..=max_objects).prop_flat_map(|(nf, no)| {
        prop::collection::vec(
            (prop::sample::select(COLORS.to_vec()), (0u8..5, 0u8..3, 0u8..3), prop::collection::vec(arb_cell(), nf - 1)),
            no,
        )
        .prop_map(|objs| {
            let specs: Vec<ObjSpec> = objs
                .into_iter()
                .map(|(color, first, rest)| ObjSpec {
                    color,
                    frames: std::iter::once(Some(first)).chain(rest).collect(),
                })
                .collect();
            build_segment("s", &specs)
        })
    })
}

pub fn arb_atom(n_v: u8) -> impl Strategy<Value = PredicateAtom> {
    let binary = ["Near", "Far", "LeftOf", "RightOf", "FrontOf", "Behind"];
    let unary = ["Left", "Right", "Top", "Bottom"];
    prop_oneof![
        3 => (prop::sample::select(binary.to_vec()), 0..n_v, 1..n_v)
            .prop_map(move |(p, a, d)| PredicateAtom::new(p, &[a, (a + d) % n_v], None)),
        2 => (prop::sample::select(unary.to_vec()), 0..n_v).prop_map(|(p, a)| PredicateAtom::new(p, &[a], None)),
        1 => (0..n_v, prop::sample::select(COLORS.to_vec())).prop_map(|(a, c)| PredicateAtom::new("Color", &[a], Some(c))),
    ]
}

/// Queries with up to `max_graphs` graphs, `max_atoms` atoms in total and
/// durations up to `max_duration`, over at most three variables.
pub fn arb_query(max_graphs: usize, max_atoms: usize, max_duration: u32) -> impl Strategy<Value = Query> {
    (2u8..=3)
        .prop_flat_map(move |n_v| {
            prop::collection::vec((prop::collection::vec(arb_atom(n_v), 1..=2), 1..=max_duration), 1..=max_graphs)
        })
        .prop_map(|gs| prefix_vars(Query::new(gs.into_iter().map(|(a, d)| RegionGraphSpec::new(a, d)).collect())))
        .prop_filter("atom cap", move |q| q.atom_count() <= max_atoms)
}

/// Renumbers variables by first appearance so they form a prefix.
pub fn prefix_vars(q: Query) -> Query {
    let mut order: Vec<u8> = Vec::new();
    for g in &q.graphs {
        for a in g.atoms() {
            for v in &a.vars {
                if !order.contains(&v.0) {
                    order.push(v.0);
                }
            }
        }
    }
    let rename = |v: u8| order.iter().position(|&o| o == v).unwrap() as u8;
    Query::new(
        q.graphs
            .iter()
            .map(|g| {
                let atoms = g
                    .atoms()
                    .iter()
                    .map(|a| {
                        let vars: Vec<u8> = a.vars.iter().map(|v| rename(v.0)).collect();
                        PredicateAtom::new(&a.pred, &vars, a.constant.as_deref())
                    })
                    .collect();
                RegionGraphSpec::new(atoms, g.duration)
            })
            .collect(),
    )
}

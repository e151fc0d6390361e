//! Predicate registry: the boolean functions queries are built from.
//!
//! Geometry conventions (y grows downward):
//!
//! * center `c(o)` is the bbox midpoint, `r(o)` half its diagonal;
//! * `Near(a, b)` iff `|c(a) - c(b)| <= 1.05 (r(a) + r(b))`,
//!   `Far(a, b)` iff `|c(a) - c(b)| >= 2.1 (r(a) + r(b))`;
//! * `LeftOf`/`RightOf` compare center x, `FrontOf`/`Behind` compare depth
//!   (smaller is nearer the camera), ties are false;
//! * `Left`/`Right`/`Top`/`Bottom` are half-plane tests against the frame
//!   midlines; an object exactly on a midline satisfies none of them.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{Fid, Oid, Placement, RelationshipRecord, Segment, TrackIdx};

pub const COLORS: [&str; 8] = ["gray", "red", "blue", "green", "brown", "cyan", "purple", "yellow"];
pub const MATERIALS: [&str; 2] = ["metal", "rubber"];
pub const SHAPES: [&str; 3] = ["cube", "sphere", "cylinder"];

pub const NEAR_FACTOR: f64 = 1.05;
pub const FAR_FACTOR: f64 = 2.1;

#[derive(Debug, Error, PartialEq)]
pub enum PredicateError {
    #[error("{pred} expects {expected} argument(s), got {got}")]
    Arity { pred: String, expected: usize, got: usize },
    #[error("{pred}: arguments must be distinct objects")]
    RepeatedArgument { pred: String },
    #[error("{pred}: object {oid} is not present at frame {fid}")]
    MissingObject { pred: String, oid: Oid, fid: Fid },
    #[error("{pred}: constant {constant:?} is not in its domain")]
    Domain { pred: String, constant: Option<String> },
    #[error("unknown predicate {0}")]
    Unknown(String),
    #[error("invalid predicate extension: {0}")]
    Extension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arity {
    Unary,
    Binary,
}

impl Arity {
    pub fn count(self) -> usize {
        match self {
            Arity::Unary => 1,
            Arity::Binary => 2,
        }
    }
}

/// The evaluation rule behind a predicate.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Near { factor: f64 },
    Far { factor: f64 },
    LeftOf,
    RightOf,
    FrontOf,
    Behind,
    /// `fraction` is the share of the frame width (or height) counted as the
    /// region; 0.5 gives the half-plane tests.
    Left { fraction: f64 },
    Right { fraction: f64 },
    Top { fraction: f64 },
    Bottom { fraction: f64 },
    /// Equality against a property attribute.
    Property { key: String },
}

impl Geometry {
    fn arity(&self) -> Arity {
        match self {
            Geometry::Near { .. }
            | Geometry::Far { .. }
            | Geometry::LeftOf
            | Geometry::RightOf
            | Geometry::FrontOf
            | Geometry::Behind => Arity::Binary,
            _ => Arity::Unary,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredicateDef {
    pub name: String,
    pub arity: Arity,
    pub const_domain: Vec<String>,
    pub geometry: Geometry,
}

impl PredicateDef {
    fn new(name: &str, geometry: Geometry) -> Self {
        Self {
            name: name.to_string(),
            arity: geometry.arity(),
            const_domain: Vec::new(),
            geometry,
        }
    }

    fn property(name: &str, key: &str, domain: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            arity: Arity::Unary,
            const_domain: domain.iter().map(|s| s.to_string()).collect(),
            geometry: Geometry::Property { key: key.to_string() },
        }
    }

    pub fn needs_constant(&self) -> bool {
        !self.const_domain.is_empty()
    }

    pub fn is_location(&self) -> bool {
        matches!(
            self.geometry,
            Geometry::Left { .. } | Geometry::Right { .. } | Geometry::Top { .. } | Geometry::Bottom { .. }
        )
    }

    /// Number of distinct user-defined functions this predicate stands for:
    /// one per constant for attribute predicates, otherwise one.
    pub fn instantiations(&self) -> usize {
        self.const_domain.len().max(1)
    }

    /// Checked evaluation over oids at one frame.
    pub fn eval(&self, segment: &Segment, fid: Fid, args: &[Oid], constant: Option<&str>) -> Result<bool, PredicateError> {
        if args.len() != self.arity.count() {
            return Err(PredicateError::Arity {
                pred: self.name.clone(),
                expected: self.arity.count(),
                got: args.len(),
            });
        }
        if args.len() == 2 && args[0] == args[1] {
            return Err(PredicateError::RepeatedArgument { pred: self.name.clone() });
        }
        let valid_const = match constant {
            Some(c) => self.const_domain.iter().any(|d| d == c),
            None => self.const_domain.is_empty(),
        };
        if !valid_const {
            return Err(PredicateError::Domain {
                pred: self.name.clone(),
                constant: constant.map(str::to_string),
            });
        }
        let mut tracks = [0usize; 2];
        for (slot, &oid) in tracks.iter_mut().zip(args) {
            *slot = segment
                .track_index(oid)
                .filter(|&t| segment.track(t).at(fid).is_some())
                .ok_or_else(|| PredicateError::MissingObject {
                    pred: self.name.clone(),
                    oid,
                    fid,
                })?;
        }
        Ok(self.holds(segment, fid, &tracks[..args.len()], constant))
    }

    /// Unchecked evaluation on track indices; an absent object makes the
    /// predicate false. Callers guarantee arity and constant validity.
    #[inline]
    pub fn holds(&self, segment: &Segment, fid: Fid, tracks: &[TrackIdx], constant: Option<&str>) -> bool {
        let Some(a) = segment.track(tracks[0]).at(fid) else {
            return false;
        };
        match &self.geometry {
            Geometry::Property { key } => segment.track(tracks[0]).prop(key) == constant,
            Geometry::Left { fraction } => a.bbox.center().0 < segment.width as f64 * fraction,
            Geometry::Right { fraction } => a.bbox.center().0 > segment.width as f64 * (1.0 - fraction),
            Geometry::Top { fraction } => a.bbox.center().1 < segment.height as f64 * fraction,
            Geometry::Bottom { fraction } => a.bbox.center().1 > segment.height as f64 * (1.0 - fraction),
            binary => {
                let Some(b) = segment.track(tracks[1]).at(fid) else {
                    return false;
                };
                binary_holds(binary, a, b)
            }
        }
    }
}

#[inline]
fn binary_holds(g: &Geometry, a: &Placement, b: &Placement) -> bool {
    match g {
        Geometry::Near { factor } => center_distance(a, b) <= factor * (a.bbox.half_diagonal() + b.bbox.half_diagonal()),
        Geometry::Far { factor } => center_distance(a, b) >= factor * (a.bbox.half_diagonal() + b.bbox.half_diagonal()),
        Geometry::LeftOf => a.bbox.center().0 < b.bbox.center().0,
        Geometry::RightOf => a.bbox.center().0 > b.bbox.center().0,
        Geometry::FrontOf => a.depth < b.depth,
        Geometry::Behind => a.depth > b.depth,
        _ => unreachable!("unary geometry in binary position"),
    }
}

fn center_distance(a: &Placement, b: &Placement) -> f64 {
    let (ax, ay) = a.bbox.center();
    let (bx, by) = b.bbox.center();
    (ax - bx).hypot(ay - by)
}

/// An immutable, name-indexed set of predicates.
#[derive(Debug, Clone)]
pub struct PredicateRegistry {
    defs: Vec<PredicateDef>,
    by_name: HashMap<String, usize>,
}

impl PredicateRegistry {
    pub fn new(defs: Vec<PredicateDef>) -> Result<Self, PredicateError> {
        let mut by_name = HashMap::new();
        for (i, d) in defs.iter().enumerate() {
            if d.name == "Duration" || !is_identifier(&d.name) {
                return Err(PredicateError::Extension(format!("invalid predicate name {:?}", d.name)));
            }
            if by_name.insert(d.name.clone(), i).is_some() {
                return Err(PredicateError::Extension(format!("duplicate predicate {}", d.name)));
            }
        }
        Ok(Self { defs, by_name })
    }

    /// The 13 built-in predicate families.
    pub fn builtin() -> Self {
        Self::new(builtin_registry()).expect("built-in names are valid")
    }

    pub fn shared_builtin() -> Arc<Self> {
        Arc::new(Self::builtin())
    }

    /// Built-ins plus the threshold-parameterized forms declared in a JSON
    /// extension file.
    pub fn with_extensions(path: &Path) -> Result<Self, PredicateError> {
        let text = std::fs::read_to_string(path).map_err(|e| PredicateError::Extension(e.to_string()))?;
        Self::builtin().extended_from_json(&text)
    }

    pub fn extended_from_json(&self, json: &str) -> Result<Self, PredicateError> {
        let file: ExtensionFile = serde_json::from_str(json).map_err(|e| PredicateError::Extension(e.to_string()))?;
        let mut defs = self.defs.clone();
        for ext in file.predicates {
            defs.push(ext.into_def()?);
        }
        Self::new(defs)
    }

    pub fn get(&self, name: &str) -> Option<&PredicateDef> {
        self.by_name.get(name).map(|&i| &self.defs[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn by_index(&self, idx: usize) -> &PredicateDef {
        &self.defs[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &PredicateDef> {
        self.defs.iter()
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    /// Checked evaluation by predicate name.
    pub fn eval(&self, name: &str, segment: &Segment, fid: Fid, args: &[Oid], constant: Option<&str>) -> Result<bool, PredicateError> {
        self.get(name)
            .ok_or_else(|| PredicateError::Unknown(name.to_string()))?
            .eval(segment, fid, args, constant)
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic()) && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn builtin_registry() -> Vec<PredicateDef> {
    vec![
        PredicateDef::new("Near", Geometry::Near { factor: NEAR_FACTOR }),
        PredicateDef::new("Far", Geometry::Far { factor: FAR_FACTOR }),
        PredicateDef::new("LeftOf", Geometry::LeftOf),
        PredicateDef::new("RightOf", Geometry::RightOf),
        PredicateDef::new("FrontOf", Geometry::FrontOf),
        PredicateDef::new("Behind", Geometry::Behind),
        PredicateDef::new("Left", Geometry::Left { fraction: 0.5 }),
        PredicateDef::new("Right", Geometry::Right { fraction: 0.5 }),
        PredicateDef::new("Top", Geometry::Top { fraction: 0.5 }),
        PredicateDef::new("Bottom", Geometry::Bottom { fraction: 0.5 }),
        PredicateDef::property("Color", "color", &COLORS),
        PredicateDef::property("Material", "material", &MATERIALS),
        PredicateDef::property("Shape", "shape", &SHAPES),
    ]
}

/// Relationships at `fid`, derived by evaluating every binary predicate on
/// every ordered pair of present objects. Relationship ids are assigned in
/// evaluation order.
pub fn relationships_at(registry: &PredicateRegistry, segment: &Segment, fid: Fid) -> Vec<RelationshipRecord> {
    let mut out = Vec::new();
    if fid >= segment.frame_count {
        return out;
    }
    let present = segment.present_at(fid);
    for &a in present {
        for &b in present {
            if a == b {
                continue;
            }
            for def in registry.iter().filter(|d| d.arity == Arity::Binary) {
                if def.holds(segment, fid, &[a, b], None) {
                    out.push(RelationshipRecord {
                        vid: segment.vid.clone(),
                        fid,
                        rid: out.len() as u32,
                        oid_sub: segment.track(a).oid,
                        oid_tar: segment.track(b).oid,
                        pid: Arc::from(def.name.as_str()),
                    });
                }
            }
        }
    }
    out
}

/// Location attributes (`location = left|right|top|bottom`) at `fid`.
pub fn location_attributes_at(registry: &PredicateRegistry, segment: &Segment, fid: Fid) -> Vec<crate::scene::AttributeRecord> {
    let mut out = Vec::new();
    if fid >= segment.frame_count {
        return out;
    }
    for &t in segment.present_at(fid) {
        for def in registry.iter().filter(|d| d.is_location()) {
            if def.holds(segment, fid, &[t], None) {
                out.push(crate::scene::AttributeRecord {
                    vid: segment.vid.clone(),
                    fid,
                    oid: segment.track(t).oid,
                    key: "location".into(),
                    value: def.name.to_lowercase(),
                    kind: crate::scene::AttributeKind::Location,
                });
            }
        }
    }
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtensionFile {
    predicates: Vec<ExtensionDef>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtensionDef {
    name: String,
    form: String,
    #[serde(default)]
    factor: Option<f64>,
    #[serde(default)]
    fraction: Option<f64>,
}

impl ExtensionDef {
    fn into_def(self) -> Result<PredicateDef, PredicateError> {
        let need = |v: Option<f64>, what: &str| -> Result<f64, PredicateError> {
            match v {
                Some(x) if x.is_finite() && x > 0.0 => Ok(x),
                _ => Err(PredicateError::Extension(format!("{}: form {} needs a positive {what}", self.name, self.form))),
            }
        };
        let fraction = |v: Option<f64>| -> Result<f64, PredicateError> {
            let f = need(v, "fraction")?;
            if f > 1.0 {
                return Err(PredicateError::Extension(format!("{}: fraction must be in (0, 1]", self.name)));
            }
            Ok(f)
        };
        let geometry = match self.form.as_str() {
            "near" => Geometry::Near { factor: need(self.factor, "factor")? },
            "far" => Geometry::Far { factor: need(self.factor, "factor")? },
            "left" => Geometry::Left { fraction: fraction(self.fraction)? },
            "right" => Geometry::Right { fraction: fraction(self.fraction)? },
            "top" => Geometry::Top { fraction: fraction(self.fraction)? },
            "bottom" => Geometry::Bottom { fraction: fraction(self.fraction)? },
            other => return Err(PredicateError::Extension(format!("{}: unsupported form {other:?}", self.name))),
        };
        Ok(PredicateDef::new(&self.name, geometry))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{BBox, SegmentBuilder};
    use proptest::prelude::*;

    fn two_objects(a: BBox, da: f64, b: BBox, db: f64) -> Segment {
        let mut sb = SegmentBuilder::new("v", 1, 480, 320);
        sb.object(1, Arc::from("cube"), [("color".to_string(), "red".to_string())]).unwrap();
        sb.object(2, Arc::from("sphere"), [("color".to_string(), "blue".to_string())]).unwrap();
        sb.place(1, 0, a, da).unwrap();
        sb.place(2, 0, b, db).unwrap();
        sb.build().unwrap()
    }

    fn square(cx: f64, cy: f64, side: f64) -> BBox {
        BBox::new(cx - side / 2.0, cy - side / 2.0, cx + side / 2.0, cy + side / 2.0)
    }

    #[test]
    fn registry_shape() {
        let r = PredicateRegistry::builtin();
        assert_eq!(r.len(), 13);
        assert_eq!(r.get("Color").unwrap().const_domain.len(), 8);
        assert_eq!(r.get("Material").unwrap().const_domain.len(), 2);
        assert_eq!(r.get("Shape").unwrap().const_domain.len(), 3);
        assert_eq!(r.get("Near").unwrap().arity, Arity::Binary);
        assert_eq!(r.iter().filter(|d| d.arity == Arity::Binary).count(), 6);
    }

    #[test]
    fn left_of_compares_centers() {
        let r = PredicateRegistry::builtin();
        let s = two_objects(square(100., 50., 20.), 1., square(300., 50., 20.), 2.);
        assert!(r.eval("LeftOf", &s, 0, &[1, 2], None).unwrap());
        assert!(!r.eval("LeftOf", &s, 0, &[2, 1], None).unwrap());
        assert!(r.eval("RightOf", &s, 0, &[2, 1], None).unwrap());
    }

    #[test]
    fn identical_boxes_are_near_not_far() {
        let r = PredicateRegistry::builtin();
        let b = square(100., 100., 40.);
        let s = two_objects(b, 1., b, 2.);
        assert!(r.eval("Near", &s, 0, &[1, 2], None).unwrap());
        assert!(!r.eval("Far", &s, 0, &[1, 2], None).unwrap());
    }

    #[test]
    fn bottom_at_three_quarters_height() {
        let r = PredicateRegistry::builtin();
        // center y = 240 = 0.75 * 320 > 160
        let s = two_objects(square(100., 240., 20.), 1., square(300., 50., 20.), 2.);
        assert!(r.eval("Bottom", &s, 0, &[1], None).unwrap());
        assert!(!r.eval("Top", &s, 0, &[1], None).unwrap());
        assert!(r.eval("Top", &s, 0, &[2], None).unwrap());
    }

    #[test]
    fn midline_is_in_no_half_plane() {
        let r = PredicateRegistry::builtin();
        let s = two_objects(square(240., 160., 20.), 1., square(10., 10., 4.), 2.);
        for name in ["Left", "Right", "Top", "Bottom"] {
            assert!(!r.eval(name, &s, 0, &[1], None).unwrap(), "{name}");
        }
    }

    #[test]
    fn property_predicates_and_domain_errors() {
        let r = PredicateRegistry::builtin();
        let s = two_objects(square(10., 10., 4.), 1., square(100., 10., 4.), 2.);
        assert!(r.eval("Color", &s, 0, &[1], Some("red")).unwrap());
        assert!(!r.eval("Color", &s, 0, &[2], Some("red")).unwrap());
        assert!(matches!(r.eval("Color", &s, 0, &[1], Some("pink")), Err(PredicateError::Domain { .. })));
        assert!(matches!(r.eval("Color", &s, 0, &[1], None), Err(PredicateError::Domain { .. })));
        assert!(matches!(r.eval("Near", &s, 0, &[1], None), Err(PredicateError::Arity { .. })));
        assert!(matches!(r.eval("Near", &s, 0, &[1, 1], None), Err(PredicateError::RepeatedArgument { .. })));
        assert!(matches!(r.eval("Near", &s, 0, &[1, 5], None), Err(PredicateError::MissingObject { .. })));
    }

    #[test]
    fn relationships_are_derived() {
        let r = PredicateRegistry::builtin();
        let s = two_objects(square(100., 50., 20.), 1., square(300., 50., 20.), 2.);
        let rels = relationships_at(&r, &s, 0);
        let names: Vec<(u32, &str)> = rels.iter().map(|x| (x.oid_sub, &*x.pid)).collect();
        assert!(names.contains(&(1, "LeftOf")));
        assert!(names.contains(&(1, "FrontOf")));
        assert!(names.contains(&(2, "Behind")));
        assert!(names.contains(&(1, "Far")));
        let locs = location_attributes_at(&r, &s, 0);
        assert!(locs.iter().any(|a| a.oid == 1 && a.value == "left"));
    }

    #[test]
    fn extension_file() {
        let r = PredicateRegistry::builtin()
            .extended_from_json(r#"{"predicates":[{"name":"VeryNear","form":"near","factor":0.5},{"name":"LeftThird","form":"left","fraction":0.3333}]}"#)
            .unwrap();
        assert_eq!(r.len(), 15);
        let s = two_objects(square(100., 50., 20.), 1., square(125., 50., 20.), 2.);
        assert!(r.eval("Near", &s, 0, &[1, 2], None).unwrap());
        assert!(!r.eval("VeryNear", &s, 0, &[1, 2], None).unwrap());
        assert!(r.eval("LeftThird", &s, 0, &[1], None).unwrap());
        assert!(PredicateRegistry::builtin().extended_from_json(r#"{"predicates":[{"name":"Near","form":"near","factor":1}]}"#).is_err());
        assert!(PredicateRegistry::builtin().extended_from_json(r#"{"predicates":[{"name":"X","form":"eval","factor":1}]}"#).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..400.0f64, 0.0..250.0f64, 1.0..80.0f64, 1.0..80.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn pairwise_laws(a in arb_box(), b in arb_box(), da in 0.0..10.0f64, db in 0.0..10.0f64) {
            let r = PredicateRegistry::builtin();
            let s = two_objects(a, da, b, db);
            let ev = |n: &str, x: u32, y: u32| r.eval(n, &s, 0, &[x, y], None).unwrap();
            prop_assert!(!(ev("LeftOf", 1, 2) && ev("LeftOf", 2, 1)));
            prop_assert!(!(ev("FrontOf", 1, 2) && ev("FrontOf", 2, 1)));
            prop_assert_eq!(ev("LeftOf", 1, 2), ev("RightOf", 2, 1));
            prop_assert_eq!(ev("FrontOf", 1, 2), ev("Behind", 2, 1));
            prop_assert_eq!(ev("Near", 1, 2), ev("Near", 2, 1));
            prop_assert_eq!(ev("Far", 1, 2), ev("Far", 2, 1));
            prop_assert!(!(ev("Near", 1, 2) && ev("Far", 1, 2)));
        }
    }
}

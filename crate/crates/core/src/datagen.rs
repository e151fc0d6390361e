//! Procedural scene-graph segments: objects with random attributes moving
//! linearly inside the frame and bouncing off its walls, plus a depth
//! coordinate that drifts and bounces between `DEPTH_RANGE` bounds.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::Query;
use crate::executor::Executor;
use crate::predicates::{COLORS, MATERIALS, SHAPES};
use crate::scene::{BBox, Segment, SegmentBuilder, SegmentStore};

/// Square box side in pixels for each shape.
pub fn shape_size(shape: &str) -> f64 {
    match shape {
        "cube" => 64.0,
        "sphere" => 56.0,
        _ => 60.0,
    }
}

pub const DEPTH_RANGE: (f64, f64) = (1.0, 10.0);
/// Smallest depth gap kept between co-present objects.
const DEPTH_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub n_segments: usize,
    pub frames_per_segment: u32,
    pub width: u32,
    pub height: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Planar speed range in pixels per frame.
    pub min_speed: f64,
    pub max_speed: f64,
    /// Maximum depth change per frame.
    pub max_depth_speed: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n_segments: 100,
            frames_per_segment: 128,
            width: 480,
            height: 320,
            min_objects: 2,
            max_objects: 4,
            min_speed: 0.5,
            max_speed: 2.0,
            max_depth_speed: 0.15,
            seed: 0,
        }
    }
}

impl GenSpec {
    /// Object pairs only, the layout used by the trajectory benchmarks.
    /// Pairs move faster than the default so that multi-step sequences such
    /// as far, near, far again still occur in a few percent of segments.
    pub fn pairs(n_segments: usize, seed: u64) -> Self {
        Self {
            n_segments,
            min_objects: 2,
            max_objects: 2,
            min_speed: 1.0,
            max_speed: 3.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.frames_per_segment == 0 || self.width == 0 || self.height == 0 {
            return Err("frames, width and height must be positive".into());
        }
        if self.min_objects < 1 || self.min_objects > self.max_objects {
            return Err("need 1 <= min_objects <= max_objects".into());
        }
        if !(self.min_speed >= 0.0 && self.min_speed <= self.max_speed) || self.max_depth_speed < 0.0 {
            return Err("invalid speed range".into());
        }
        let largest = SHAPES.iter().map(|s| shape_size(s)).fold(0.0, f64::max);
        if (self.width as f64) <= largest || (self.height as f64) <= largest {
            return Err(format!("frame must be larger than {largest} px"));
        }
        Ok(())
    }
}

/// splitmix64 step, used to derive independent per-segment seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Reflects `pos` moving with `vel` into `[lo, hi]`.
fn bounce(pos: &mut f64, vel: &mut f64, lo: f64, hi: f64) {
    *pos += *vel;
    if *pos < lo {
        *pos = 2.0 * lo - *pos;
        *vel = -*vel;
    } else if *pos > hi {
        *pos = 2.0 * hi - *pos;
        *vel = -*vel;
    }
    *pos = pos.clamp(lo, hi);
}

struct Body {
    size: f64,
    x: f64,
    y: f64,
    z: f64,
    vx: f64,
    vy: f64,
    vz: f64,
}

pub fn generate_segment(spec: &GenSpec, index: usize) -> Segment {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));
    let vid = format!("seg{index:05}");
    let (w, h) = (spec.width as f64, spec.height as f64);
    let n = rng.gen_range(spec.min_objects..=spec.max_objects);
    let mut builder = SegmentBuilder::new(vid, spec.frames_per_segment, spec.width, spec.height);
    let mut bodies = Vec::with_capacity(n);
    for i in 0..n {
        let color = *COLORS.choose(&mut rng).expect("nonempty");
        let material = *MATERIALS.choose(&mut rng).expect("nonempty");
        let shape = *SHAPES.choose(&mut rng).expect("nonempty");
        let size = shape_size(shape);
        let props = BTreeMap::from([
            ("color".to_string(), color.to_string()),
            ("material".to_string(), material.to_string()),
            ("shape".to_string(), shape.to_string()),
        ]);
        builder.object(i as u32, shape, props).expect("fresh object");
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let speed = rng.gen_range(spec.min_speed..=spec.max_speed);
        bodies.push(Body {
            size,
            x: rng.gen_range(size / 2.0..=w - size / 2.0),
            y: rng.gen_range(size / 2.0..=h - size / 2.0),
            z: rng.gen_range(DEPTH_RANGE.0..=DEPTH_RANGE.1),
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
            vz: rng.gen_range(-spec.max_depth_speed..=spec.max_depth_speed),
        });
    }
    for fid in 0..spec.frames_per_segment {
        if fid > 0 {
            for b in &mut bodies {
                let half = b.size / 2.0;
                bounce(&mut b.x, &mut b.vx, half, w - half);
                bounce(&mut b.y, &mut b.vy, half, h - half);
                bounce(&mut b.z, &mut b.vz, DEPTH_RANGE.0, DEPTH_RANGE.1);
            }
        }
        let depths = distinct_depths(bodies.iter().map(|b| round2(b.z)).collect());
        for (i, (b, depth)) in bodies.iter().zip(depths).enumerate() {
            let half = b.size / 2.0;
            let bbox = BBox::new(round2(b.x - half), round2(b.y - half), round2(b.x + half), round2(b.y + half));
            builder.place(i as u32, fid, bbox, depth).expect("valid placement");
        }
    }
    builder.build().expect("generated segment is valid")
}

/// Nudges rounded depths apart so no two co-present objects tie.
fn distinct_depths(mut depths: Vec<f64>) -> Vec<f64> {
    let mut order: Vec<usize> = (0..depths.len()).collect();
    order.sort_by(|&a, &b| depths[a].total_cmp(&depths[b]).then(a.cmp(&b)));
    for w in 1..order.len() {
        let (prev, cur) = (order[w - 1], order[w]);
        if depths[cur] - depths[prev] < DEPTH_EPSILON - 1e-9 {
            depths[cur] = round2(depths[prev] + DEPTH_EPSILON);
        }
    }
    depths
}

pub fn generate(spec: &GenSpec) -> SegmentStore {
    let segments = (0..spec.n_segments).map(|i| generate_segment(spec, i)).collect();
    SegmentStore::from_segments(segments).expect("generated vids are unique")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityEntry {
    pub query: String,
    pub positives: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub entries: Vec<SelectivityEntry>,
}

/// Fraction of segments matching each target.
pub fn calibrate_selectivity(store: &SegmentStore, targets: &[Query], executor: &Executor) -> Result<CalibrationReport, crate::executor::ExecError> {
    let vids: Vec<&str> = store.vids().collect();
    let entries = targets
        .iter()
        .map(|q| {
            let positives = executor.execute(q, store, &vids)?.len();
            let total = vids.len();
            Ok(SelectivityEntry {
                query: q.to_string(),
                positives,
                total,
                rate: if total == 0 { 0.0 } else { positives as f64 / total as f64 },
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CalibrationReport { entries })
}

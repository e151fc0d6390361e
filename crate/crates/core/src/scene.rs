//! In-memory relational view of extracted video content.
//!
//! A [`SegmentStore`] holds one [`Segment`] per video segment. Each segment
//! owns the `Objects` relation (one bounding box and depth per object per
//! frame) and the property part of the `Attributes` relation. Location
//! attributes and relationships are never stored; they are derived from
//! geometry on demand (see [`crate::predicates`]).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Oid = u32;
pub type Fid = u32;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity error in segment {vid}: {message}")]
    Integrity { vid: String, message: String },
    #[error("property attribute {key:?} of object {oid} in segment {vid} is not constant across frames")]
    InconsistentProperty { vid: String, oid: Oid, key: String },
    #[error("frame {fid} out of range for segment {vid} with {frame_count} frames")]
    FrameOutOfRange { vid: String, fid: Fid, frame_count: u32 },
    #[error("unknown segment {0}")]
    UnknownSegment(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Axis-aligned box, top-left `(x1, y1)` to bottom-right `(x2, y2)`, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Half of the box diagonal.
    pub fn half_diagonal(&self) -> f64 {
        (self.x2 - self.x1).hypot(self.y2 - self.y1) / 2.0
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// A row of the `Objects` relation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub vid: String,
    pub fid: Fid,
    pub oid: Oid,
    pub cid: Arc<str>,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Property,
    Location,
}

/// A row of the `Attributes` relation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeRecord {
    pub vid: String,
    pub fid: Fid,
    pub oid: Oid,
    pub key: String,
    pub value: String,
    pub kind: AttributeKind,
}

/// A row of the `Relationships` relation. Always derived, never loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationshipRecord {
    pub vid: String,
    pub fid: Fid,
    pub rid: u32,
    pub oid_sub: Oid,
    pub oid_tar: Oid,
    pub pid: Arc<str>,
}

/// Where an object is in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub bbox: BBox,
    pub depth: f64,
}

/// One object over the whole segment: identity, properties and a dense
/// per-frame placement vector (`None` where the object is absent).
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub oid: Oid,
    pub cid: Arc<str>,
    pub props: BTreeMap<String, String>,
    frames: Vec<Option<Placement>>,
}

impl Track {
    #[inline]
    pub fn at(&self, fid: Fid) -> Option<&Placement> {
        self.frames.get(fid as usize).and_then(Option::as_ref)
    }

    pub fn prop(&self, key: &str) -> Option<&str> {
        self.props.get(key).map(String::as_str)
    }

    /// Frames where the object is present, ascending.
    pub fn present_frames(&self) -> impl Iterator<Item = Fid> + '_ {
        self.frames
            .iter()
            .enumerate()
            .filter_map(|(f, p)| p.as_ref().map(|_| f as Fid))
    }
}

/// Index of a track inside its segment. Tracks are stored in ascending oid
/// order, so track indices order the same way oids do.
pub type TrackIdx = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub vid: String,
    pub frame_count: u32,
    pub width: u32,
    pub height: u32,
    tracks: Vec<Track>,
    by_frame: Vec<Vec<TrackIdx>>,
}

impl Segment {
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn track(&self, idx: TrackIdx) -> &Track {
        &self.tracks[idx]
    }

    pub fn track_index(&self, oid: Oid) -> Option<TrackIdx> {
        self.tracks.binary_search_by_key(&oid, |t| t.oid).ok()
    }

    pub fn oids(&self) -> impl Iterator<Item = Oid> + '_ {
        self.tracks.iter().map(|t| t.oid)
    }

    pub fn object_count(&self) -> usize {
        self.tracks.len()
    }

    /// Placement of `oid` at `fid`, if present.
    pub fn placement(&self, fid: Fid, oid: Oid) -> Option<&Placement> {
        self.track_index(oid).and_then(|i| self.tracks[i].at(fid))
    }

    fn check_frame(&self, fid: Fid) -> Result<(), SceneError> {
        if fid >= self.frame_count {
            return Err(SceneError::FrameOutOfRange {
                vid: self.vid.clone(),
                fid,
                frame_count: self.frame_count,
            });
        }
        Ok(())
    }

    /// All objects present at `fid`, ascending by oid.
    pub fn objects_at(&self, fid: Fid) -> Result<Vec<ObjectRecord>, SceneError> {
        self.check_frame(fid)?;
        Ok(self.by_frame[fid as usize]
            .iter()
            .map(|&i| {
                let t = &self.tracks[i];
                ObjectRecord {
                    vid: self.vid.clone(),
                    fid,
                    oid: t.oid,
                    cid: t.cid.clone(),
                    bbox: t.frames[fid as usize].expect("frame index is consistent").bbox,
                }
            })
            .collect())
    }

    /// Property attributes of every object present at `fid`.
    pub fn property_attributes_at(&self, fid: Fid) -> Result<Vec<AttributeRecord>, SceneError> {
        self.check_frame(fid)?;
        let mut out = Vec::new();
        for &i in &self.by_frame[fid as usize] {
            let t = &self.tracks[i];
            for (k, v) in &t.props {
                out.push(AttributeRecord {
                    vid: self.vid.clone(),
                    fid,
                    oid: t.oid,
                    key: k.clone(),
                    value: v.clone(),
                    kind: AttributeKind::Property,
                });
            }
        }
        Ok(out)
    }

    pub(crate) fn present_at(&self, fid: Fid) -> &[TrackIdx] {
        &self.by_frame[fid as usize]
    }
}

/// Incrementally assembles a [`Segment`] while enforcing its invariants.
#[derive(Debug)]
pub struct SegmentBuilder {
    vid: String,
    frame_count: u32,
    width: u32,
    height: u32,
    tracks: BTreeMap<Oid, Track>,
}

impl SegmentBuilder {
    pub fn new(vid: impl Into<String>, frame_count: u32, width: u32, height: u32) -> Self {
        Self {
            vid: vid.into(),
            frame_count,
            width,
            height,
            tracks: BTreeMap::new(),
        }
    }

    fn integrity(&self, message: String) -> SceneError {
        SceneError::Integrity {
            vid: self.vid.clone(),
            message,
        }
    }

    /// Declares an object. Declaring the same oid twice is allowed only with
    /// an identical class and no conflicting property values.
    pub fn object(
        &mut self,
        oid: Oid,
        cid: impl Into<Arc<str>>,
        props: impl IntoIterator<Item = (String, String)>,
    ) -> Result<&mut Self, SceneError> {
        let cid: Arc<str> = cid.into();
        let frame_count = self.frame_count as usize;
        let vid = self.vid.clone();
        let track = self.tracks.entry(oid).or_insert_with(|| Track {
            oid,
            cid: cid.clone(),
            props: BTreeMap::new(),
            frames: vec![None; frame_count],
        });
        if track.cid != cid {
            return Err(SceneError::Integrity {
                vid,
                message: format!("object {oid} declared with classes {} and {cid}", track.cid),
            });
        }
        for (k, v) in props {
            match track.props.get(&k) {
                Some(old) if *old != v => {
                    return Err(SceneError::InconsistentProperty { vid, oid, key: k });
                }
                _ => {
                    track.props.insert(k, v);
                }
            }
        }
        Ok(self)
    }

    pub fn place(&mut self, oid: Oid, fid: Fid, bbox: BBox, depth: f64) -> Result<&mut Self, SceneError> {
        if fid >= self.frame_count {
            return Err(self.integrity(format!(
                "object {oid} at frame {fid} outside 0..{}",
                self.frame_count
            )));
        }
        if !bbox.is_valid() {
            return Err(self.integrity(format!("object {oid} at frame {fid} has a degenerate bbox {bbox:?}")));
        }
        if !depth.is_finite() {
            return Err(self.integrity(format!("object {oid} at frame {fid} has non-finite depth")));
        }
        let dup = match self.tracks.get(&oid) {
            None => return Err(self.integrity(format!("object {oid} placed before it was declared"))),
            Some(t) => t.frames[fid as usize].is_some(),
        };
        if dup {
            return Err(self.integrity(format!("duplicate record for frame {fid}, object {oid}")));
        }
        self.tracks.get_mut(&oid).expect("checked above").frames[fid as usize] = Some(Placement { bbox, depth });
        Ok(self)
    }

    pub fn build(self) -> Result<Segment, SceneError> {
        if self.frame_count == 0 {
            return Err(self.integrity("frame_count must be positive".into()));
        }
        if let Some(t) = self.tracks.values().find(|t| t.frames.iter().all(Option::is_none)) {
            return Err(self.integrity(format!("object {} is not present in any frame", t.oid)));
        }
        let tracks: Vec<Track> = self.tracks.into_values().collect();
        let mut by_frame = vec![Vec::new(); self.frame_count as usize];
        for (i, t) in tracks.iter().enumerate() {
            for f in t.present_frames() {
                by_frame[f as usize].push(i);
            }
        }
        Ok(Segment {
            vid: self.vid,
            frame_count: self.frame_count,
            width: self.width,
            height: self.height,
            tracks,
            by_frame,
        })
    }
}

/// Immutable collection of segments indexed by vid.
#[derive(Debug, Clone, Default)]
pub struct SegmentStore {
    segments: Vec<Segment>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    CsvDir,
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "csv-dir" | "csv" => Ok(Self::CsvDir),
            other => Err(format!("unknown dataset format {other:?} (expected jsonl or csv-dir)")),
        }
    }
}

impl SegmentStore {
    /// Builds a store, sorting segments by vid. Duplicate vids are rejected.
    pub fn from_segments(mut segments: Vec<Segment>) -> Result<Self, SceneError> {
        segments.sort_by(|a, b| a.vid.cmp(&b.vid));
        let mut index = HashMap::with_capacity(segments.len());
        for (i, s) in segments.iter().enumerate() {
            if index.insert(s.vid.clone(), i).is_some() {
                return Err(SceneError::Integrity {
                    vid: s.vid.clone(),
                    message: "duplicate segment id".into(),
                });
            }
        }
        Ok(Self { segments, index })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, vid: &str) -> Option<&Segment> {
        self.index.get(vid).map(|&i| &self.segments[i])
    }

    pub fn segment(&self, vid: &str) -> Result<&Segment, SceneError> {
        self.get(vid).ok_or_else(|| SceneError::UnknownSegment(vid.to_string()))
    }

    pub fn position(&self, vid: &str) -> Option<usize> {
        self.index.get(vid).copied()
    }

    pub fn vids(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().map(|s| s.vid.as_str())
    }

    pub fn frame_count(&self, vid: &str) -> Option<u32> {
        self.get(vid).map(|s| s.frame_count)
    }

    /// A new store holding copies of the named segments.
    pub fn subset<S: AsRef<str>>(&self, vids: &[S]) -> Result<Self, SceneError> {
        let segs = vids
            .iter()
            .map(|v| self.segment(v.as_ref()).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_segments(segs)
    }

    pub fn load(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Self, SceneError> {
        match format {
            DatasetFormat::Jsonl => Self::read_jsonl(BufReader::new(File::open(path)?)),
            DatasetFormat::CsvDir => Self::read_csv_dir(path.as_ref()),
        }
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self, SceneError> {
        let mut interner = Interner::default();
        let mut segments = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SegmentRecord = serde_json::from_str(&line).map_err(|e| SceneError::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            if !seen.insert(rec.vid.clone()) {
                return Err(SceneError::Integrity {
                    vid: rec.vid,
                    message: format!("duplicate segment id (line {})", n + 1),
                });
            }
            segments.push(rec.into_segment(&mut interner)?);
        }
        Self::from_segments(segments)
    }

    /// Writes the canonical JSONL form: vids, oids and fids ascending.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), SceneError> {
        for s in &self.segments {
            serde_json::to_writer(&mut w, &SegmentRecord::from_segment(s)).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }

    /// Reads `segments.csv`, `objects.csv` and `attributes.csv` from `dir`.
    pub fn read_csv_dir(dir: &Path) -> Result<Self, SceneError> {
        let mut interner = Interner::default();
        let mut builders: BTreeMap<String, SegmentBuilder> = BTreeMap::new();

        let mut rdr = csv::Reader::from_path(dir.join("segments.csv"))?;
        for row in rdr.deserialize::<SegmentRow>() {
            let row = row?;
            if builders.contains_key(&row.vid) {
                return Err(SceneError::Integrity {
                    vid: row.vid,
                    message: "duplicate segment id".into(),
                });
            }
            builders.insert(
                row.vid.clone(),
                SegmentBuilder::new(row.vid, row.frame_count, row.width, row.height),
            );
        }

        let mut rdr = csv::Reader::from_path(dir.join("objects.csv"))?;
        for row in rdr.deserialize::<ObjectRow>() {
            let row = row?;
            let b = builders
                .get_mut(&row.vid)
                .ok_or_else(|| SceneError::UnknownSegment(row.vid.clone()))?;
            b.object(row.oid, interner.intern(&row.cid), std::iter::empty())?;
            b.place(row.oid, row.fid, BBox::new(row.x1, row.y1, row.x2, row.y2), row.depth)?;
        }

        let attr_path = dir.join("attributes.csv");
        if attr_path.exists() {
            let mut rdr = csv::Reader::from_path(attr_path)?;
            for row in rdr.deserialize::<AttributeRow>() {
                let row = row?;
                let b = builders
                    .get_mut(&row.vid)
                    .ok_or_else(|| SceneError::UnknownSegment(row.vid.clone()))?;
                let present = b.tracks.get(&row.oid).and_then(|t| t.frames.get(row.fid as usize)).is_some_and(Option::is_some);
                if !present {
                    return Err(SceneError::Integrity {
                        vid: row.vid,
                        message: format!("attribute for absent object {} at frame {}", row.oid, row.fid),
                    });
                }
                let cid = b.tracks[&row.oid].cid.clone();
                b.object(row.oid, cid, [(row.key, row.value)])?;
            }
        }

        Self::from_segments(builders.into_values().map(SegmentBuilder::build).collect::<Result<_, _>>()?)
    }

    /// Writes the CSV directory form. Property attributes are repeated for
    /// every frame an object is present in, mirroring the relational view.
    pub fn write_csv_dir(&self, dir: &Path) -> Result<(), SceneError> {
        std::fs::create_dir_all(dir)?;
        let mut seg_w = csv::Writer::from_path(dir.join("segments.csv"))?;
        let mut obj_w = csv::Writer::from_path(dir.join("objects.csv"))?;
        let mut attr_w = csv::Writer::from_path(dir.join("attributes.csv"))?;
        for s in &self.segments {
            seg_w.serialize(SegmentRow {
                vid: s.vid.clone(),
                frame_count: s.frame_count,
                width: s.width,
                height: s.height,
            })?;
            for t in &s.tracks {
                for fid in t.present_frames() {
                    let p = t.at(fid).expect("present");
                    obj_w.serialize(ObjectRow {
                        vid: s.vid.clone(),
                        fid,
                        oid: t.oid,
                        cid: t.cid.to_string(),
                        x1: p.bbox.x1,
                        y1: p.bbox.y1,
                        x2: p.bbox.x2,
                        y2: p.bbox.y2,
                        depth: p.depth,
                    })?;
                    for (k, v) in &t.props {
                        attr_w.serialize(AttributeRow {
                            vid: s.vid.clone(),
                            fid,
                            oid: t.oid,
                            key: k.clone(),
                            value: v.clone(),
                        })?;
                    }
                }
            }
        }
        seg_w.flush()?;
        obj_w.flush()?;
        attr_w.flush()?;
        Ok(())
    }
}

/// Convenience wrapper over [`SegmentStore::load`].
pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<SegmentStore, SceneError> {
    SegmentStore::load(path, format)
}

#[derive(Default)]
struct Interner(HashSet<Arc<str>>);

impl Interner {
    fn intern(&mut self, s: &str) -> Arc<str> {
        if let Some(v) = self.0.get(s) {
            return v.clone();
        }
        let v: Arc<str> = Arc::from(s);
        self.0.insert(v.clone());
        v
    }
}

/// One line of the JSONL dataset format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub vid: String,
    pub frame_count: u32,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<TrackRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub oid: Oid,
    pub cid: String,
    #[serde(default)]
    pub props: BTreeMap<String, String>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub fid: Fid,
    pub bbox: BBox,
    pub depth: f64,
}

impl SegmentRecord {
    fn into_segment(self, interner: &mut Interner) -> Result<Segment, SceneError> {
        let mut b = SegmentBuilder::new(self.vid, self.frame_count, self.width, self.height);
        for o in self.objects {
            b.object(o.oid, interner.intern(&o.cid), o.props)?;
            for f in o.frames {
                b.place(o.oid, f.fid, f.bbox, f.depth)?;
            }
        }
        b.build()
    }

    pub fn from_segment(s: &Segment) -> Self {
        Self {
            vid: s.vid.clone(),
            frame_count: s.frame_count,
            width: s.width,
            height: s.height,
            objects: s
                .tracks
                .iter()
                .map(|t| TrackRecord {
                    oid: t.oid,
                    cid: t.cid.to_string(),
                    props: t.props.clone(),
                    frames: t
                        .present_frames()
                        .map(|fid| {
                            let p = t.at(fid).expect("present");
                            FrameRecord { fid, bbox: p.bbox, depth: p.depth }
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SegmentRow {
    vid: String,
    frame_count: u32,
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct ObjectRow {
    vid: String,
    fid: Fid,
    oid: Oid,
    cid: String,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    depth: f64,
}

#[derive(Serialize, Deserialize)]
struct AttributeRow {
    vid: String,
    fid: Fid,
    oid: Oid,
    key: String,
    value: String,
}

/// An event witness: which objects play which variable, and the frame run
/// matched by each region graph. `assignment[i]` is the oid bound to
/// variable `o{i+1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMatch {
    pub vid: String,
    pub assignment: Vec<Oid>,
    pub runs: Vec<(Fid, Fid)>,
}

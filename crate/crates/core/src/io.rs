//! Readers and writers for MOT Challenge and KITTI tracking text files and
//! for the JSON Lines embedding sidecars.
//!
//! Frames are 1-based everywhere inside the library. KITTI files count from
//! 0 and are shifted on read and write.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{Embedding, LabeledFrame};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Per-frame lists keyed by 1-based frame index.
pub type FrameMap<T> = BTreeMap<u64, Vec<T>>;

/// A detector output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u64,
    pub bbox: BBox,
    pub score: f64,
    pub embedding: Option<Embedding>,
}

/// A labeled box of a ground-truth or hypothesis trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackBox {
    pub id: u64,
    pub bbox: BBox,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn num(field: &str, name: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("{name}: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("{name}: `{field}` is not finite")));
    }
    Ok(v)
}

fn int(field: &str, name: &str, line: usize) -> Result<i64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("{name}: `{field}` is not an integer")))
}

// ---------------------------------------------------------------------------
// MOT Challenge

/// One row of a MOT Challenge file:
/// `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotRecord {
    pub frame: u64,
    /// `-1` for unlabeled detections.
    pub id: i64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub conf: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl MotRecord {
    pub fn from_bbox(frame: u64, id: i64, bbox: &BBox, conf: f64) -> Self {
        Self {
            frame,
            id,
            left: bbox.x1(),
            top: bbox.y1(),
            width: bbox.width(),
            height: bbox.height(),
            conf,
            x: -1.0,
            y: -1.0,
            z: -1.0,
        }
    }

    pub fn bbox(&self) -> Result<BBox> {
        BBox::from_ltwh(self.left, self.top, self.width, self.height)
    }
}

fn parse_mot_line(line: &str, lineno: usize) -> Result<MotRecord> {
    let fields: Vec<&str> = line.split(',').collect();
    if !(6..=10).contains(&fields.len()) {
        return Err(Error::parse(
            lineno,
            format!("expected 6 to 10 comma-separated fields, found {}", fields.len()),
        ));
    }
    let frame = int(fields[0], "frame", lineno)?;
    if frame < 1 {
        return Err(Error::parse(lineno, format!("frame must be >= 1, got {frame}")));
    }
    let id = int(fields[1], "id", lineno)?;
    if id < -1 {
        return Err(Error::parse(lineno, format!("id must be >= -1, got {id}")));
    }
    let opt = |i: usize, name: &str, default: f64| match fields.get(i) {
        Some(f) => num(f, name, lineno),
        None => Ok(default),
    };
    let rec = MotRecord {
        frame: frame as u64,
        id,
        left: num(fields[2], "bb_left", lineno)?,
        top: num(fields[3], "bb_top", lineno)?,
        width: num(fields[4], "bb_width", lineno)?,
        height: num(fields[5], "bb_height", lineno)?,
        conf: opt(6, "conf", 1.0)?,
        x: opt(7, "x", -1.0)?,
        y: opt(8, "y", -1.0)?,
        z: opt(9, "z", -1.0)?,
    };
    if !(rec.width > 0.0 && rec.height > 0.0) {
        return Err(Error::parse(lineno, "bb_width and bb_height must be > 0"));
    }
    rec.bbox().map_err(|e| Error::parse(lineno, e.to_string()))?;
    Ok(rec)
}

/// Parses MOT text. Blank lines are ignored; row order is preserved.
pub fn parse_mot(text: &str) -> Result<Vec<MotRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_mot_line(l.trim(), i + 1))
        .collect()
}

pub fn read_mot(path: impl AsRef<Path>) -> Result<Vec<MotRecord>> {
    let path = path.as_ref();
    parse_mot(&read_text(path)?).map_err(|e| e.in_file(path))
}

/// Renders rows sorted by frame, then id. Floats use the shortest
/// representation that parses back to the same value.
pub fn format_mot(records: &[MotRecord]) -> String {
    let mut sorted: Vec<&MotRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut out = String::new();
    for r in sorted {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.frame, r.id, r.left, r.top, r.width, r.height, r.conf, r.x, r.y, r.z
        );
    }
    out
}

pub fn write_mot(path: impl AsRef<Path>, records: &[MotRecord]) -> Result<()> {
    write_text(path.as_ref(), &format_mot(records))
}

// ---------------------------------------------------------------------------
// KITTI tracking

/// One row of a KITTI tracking label or result file.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiRecord {
    /// 1-based.
    pub frame: u64,
    /// `-1` for DontCare regions.
    pub track_id: i64,
    pub kind: String,
    pub truncated: f64,
    pub occluded: i64,
    pub alpha: f64,
    /// left, top, right, bottom.
    pub bbox: [f64; 4],
    /// height, width, length.
    pub dimensions: [f64; 3],
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiRecord {
    pub fn from_bbox(frame: u64, track_id: i64, kind: &str, bbox: &BBox, score: Option<f64>) -> Self {
        Self {
            frame,
            track_id,
            kind: kind.to_string(),
            truncated: -1.0,
            occluded: -1,
            alpha: -10.0,
            bbox: bbox.corners(),
            dimensions: [-1.0; 3],
            location: [-1000.0; 3],
            rotation_y: -10.0,
            score,
        }
    }

    pub fn bbox(&self) -> Result<BBox> {
        let [l, t, r, b] = self.bbox;
        BBox::new(l, t, r, b)
    }
}

fn parse_kitti_line(line: &str, lineno: usize) -> Result<KittiRecord> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 17 && f.len() != 18 {
        return Err(Error::parse(
            lineno,
            format!("expected 17 or 18 space-separated fields, found {}", f.len()),
        ));
    }
    let frame = int(f[0], "frame", lineno)?;
    if frame < 0 {
        return Err(Error::parse(lineno, format!("frame must be >= 0, got {frame}")));
    }
    let track_id = int(f[1], "track_id", lineno)?;
    if track_id < -1 {
        return Err(Error::parse(lineno, format!("track_id must be >= -1, got {track_id}")));
    }
    let kind = f[2].to_string();
    if kind.parse::<f64>().is_ok() {
        return Err(Error::parse(lineno, format!("type: `{kind}` is not a class name")));
    }
    let n = |i: usize, name: &str| num(f[i], name, lineno);
    let rec = KittiRecord {
        frame: frame as u64 + 1,
        track_id,
        kind,
        truncated: n(3, "truncated")?,
        occluded: int(f[4], "occluded", lineno)?,
        alpha: n(5, "alpha")?,
        bbox: [n(6, "left")?, n(7, "top")?, n(8, "right")?, n(9, "bottom")?],
        dimensions: [n(10, "height")?, n(11, "width")?, n(12, "length")?],
        location: [n(13, "x")?, n(14, "y")?, n(15, "z")?],
        rotation_y: n(16, "rotation_y")?,
        score: if f.len() == 18 { Some(n(17, "score")?) } else { None },
    };
    rec.bbox().map_err(|e| Error::parse(lineno, e.to_string()))?;
    Ok(rec)
}

/// Parses KITTI text, keeping only rows whose type equals `kind` when given
/// (exact, case-sensitive match).
pub fn parse_kitti(text: &str, kind: Option<&str>) -> Result<Vec<KittiRecord>> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let rec = parse_kitti_line(l, i + 1)?;
        if kind.is_none_or(|k| rec.kind == k) {
            out.push(rec);
        }
    }
    Ok(out)
}

pub fn read_kitti(path: impl AsRef<Path>, kind: Option<&str>) -> Result<Vec<KittiRecord>> {
    let path = path.as_ref();
    parse_kitti(&read_text(path)?, kind).map_err(|e| e.in_file(path))
}

/// Renders rows sorted by frame, then track id, with 0-based frames.
pub fn format_kitti(records: &[KittiRecord]) -> String {
    let mut sorted: Vec<&KittiRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.track_id));
    let mut out = String::new();
    for r in sorted {
        let [l, t, rr, b] = r.bbox;
        let [h, w, len] = r.dimensions;
        let [x, y, z] = r.location;
        let _ = write!(
            out,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            r.frame - 1,
            r.track_id,
            r.kind,
            r.truncated,
            r.occluded,
            r.alpha,
            l,
            t,
            rr,
            b,
            h,
            w,
            len,
            x,
            y,
            z,
            r.rotation_y
        );
        if let Some(s) = r.score {
            let _ = write!(out, " {s}");
        }
        out.push('\n');
    }
    out
}

pub fn write_kitti(path: impl AsRef<Path>, records: &[KittiRecord]) -> Result<()> {
    write_text(path.as_ref(), &format_kitti(records))
}

// ---------------------------------------------------------------------------
// Conversions to library types

/// Groups MOT rows into detections, keeping file order within each frame.
pub fn detections_from_mot(records: &[MotRecord]) -> Result<FrameMap<Detection>> {
    let mut out: FrameMap<Detection> = BTreeMap::new();
    for r in records {
        out.entry(r.frame).or_default().push(Detection {
            frame: r.frame,
            bbox: r.bbox()?,
            score: r.conf,
            embedding: None,
        });
    }
    Ok(out)
}

/// Groups KITTI rows into detections. Rows without a score get 1.0.
pub fn detections_from_kitti(records: &[KittiRecord]) -> Result<FrameMap<Detection>> {
    let mut out: FrameMap<Detection> = BTreeMap::new();
    for r in records {
        out.entry(r.frame).or_default().push(Detection {
            frame: r.frame,
            bbox: r.bbox()?,
            score: r.score.unwrap_or(1.0),
            embedding: None,
        });
    }
    Ok(out)
}

fn push_track_box(out: &mut FrameMap<TrackBox>, frame: u64, id: i64, bbox: BBox) -> Result<()> {
    if id < 0 {
        return Err(Error::Evaluation(format!("frame {frame}: negative track id {id}")));
    }
    out.entry(frame).or_default().push(TrackBox { id: id as u64, bbox });
    Ok(())
}

/// Groups labeled MOT rows into trajectories. Unlabeled rows are an error.
pub fn tracks_from_mot(records: &[MotRecord]) -> Result<FrameMap<TrackBox>> {
    let mut out = BTreeMap::new();
    for r in records {
        push_track_box(&mut out, r.frame, r.id, r.bbox()?)?;
    }
    Ok(out)
}

/// Groups KITTI rows into trajectories, ignoring DontCare regions (id -1).
pub fn tracks_from_kitti(records: &[KittiRecord]) -> Result<FrameMap<TrackBox>> {
    let mut out = BTreeMap::new();
    for r in records.iter().filter(|r| r.track_id >= 0 && r.kind != "DontCare") {
        push_track_box(&mut out, r.frame, r.track_id, r.bbox()?)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Embedding sidecars

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingLine {
    frame: u64,
    index: usize,
    embedding: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabeledEmbeddingLine {
    frame: u64,
    id: u64,
    embedding: Vec<f64>,
}

/// Embeddings keyed by `(frame, ordinal of the detection within its frame)`.
pub type EmbeddingTable = BTreeMap<(u64, usize), Embedding>;

fn json_lines<T: serde::de::DeserializeOwned>(text: &str) -> impl Iterator<Item = Result<(usize, T)>> + '_ {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<T>(l)
                .map(|v| (i + 1, v))
                .map_err(|e| Error::parse(i + 1, format!("invalid JSON record: {e}")))
        })
}

fn checked_embedding(values: Vec<f64>, dim: &mut Option<usize>, line: usize) -> Result<Embedding> {
    match *dim {
        Some(d) if d != values.len() => {
            return Err(Error::parse(
                line,
                format!("embedding dimension {} differs from {d}", values.len()),
            ))
        }
        None => *dim = Some(values.len()),
        _ => {}
    }
    Embedding::new(values).map_err(|e| Error::parse(line, e.to_string()))
}

/// Parses an embedding sidecar, L2-normalizing every vector.
pub fn parse_embeddings(text: &str) -> Result<EmbeddingTable> {
    let mut table = BTreeMap::new();
    let mut dim = None;
    for rec in json_lines::<EmbeddingLine>(text) {
        let (line, rec) = rec?;
        if rec.frame < 1 {
            return Err(Error::parse(line, "frame must be >= 1"));
        }
        let emb = checked_embedding(rec.embedding, &mut dim, line)?;
        if table.insert((rec.frame, rec.index), emb).is_some() {
            return Err(Error::parse(
                line,
                format!("duplicate embedding for frame {} index {}", rec.frame, rec.index),
            ));
        }
    }
    Ok(table)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    parse_embeddings(&read_text(path)?).map_err(|e| e.in_file(path))
}

pub fn format_embeddings(table: &EmbeddingTable) -> String {
    let mut out = String::new();
    for (&(frame, index), emb) in table {
        let line = EmbeddingLine {
            frame,
            index,
            embedding: emb.as_slice().to_vec(),
        };
        out.push_str(&serde_json::to_string(&line).expect("plain data serializes"));
        out.push('\n');
    }
    out
}

pub fn write_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    write_text(path.as_ref(), &format_embeddings(table))
}

/// Copies sidecar embeddings onto the detections they index.
///
/// Detections without an entry keep `None`; an entry that points at no
/// detection is an error.
pub fn attach_embeddings(detections: &mut FrameMap<Detection>, table: &EmbeddingTable) -> Result<()> {
    for (&(frame, index), emb) in table {
        let det = detections
            .get_mut(&frame)
            .and_then(|v| v.get_mut(index))
            .ok_or_else(|| Error::frame(frame, format!("embedding index {index} has no matching detection")))?;
        det.embedding = Some(emb.clone());
    }
    Ok(())
}

/// Collects the embeddings carried by detections into a sidecar table.
pub fn embedding_table(detections: &FrameMap<Detection>) -> EmbeddingTable {
    detections
        .iter()
        .flat_map(|(&frame, dets)| {
            dets.iter()
                .enumerate()
                .filter_map(move |(i, d)| d.embedding.clone().map(|e| ((frame, i), e)))
        })
        .collect()
}

/// Parses identity-labeled embeddings (`{"frame", "id", "embedding"}` per
/// line) into frames sorted by index.
pub fn parse_labeled_embeddings(text: &str) -> Result<Vec<LabeledFrame>> {
    let mut frames: BTreeMap<u64, Vec<(u64, Embedding)>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut dim = None;
    for rec in json_lines::<LabeledEmbeddingLine>(text) {
        let (line, rec) = rec?;
        if !seen.insert((rec.frame, rec.id)) {
            return Err(Error::parse(
                line,
                format!("identity {} appears twice in frame {}", rec.id, rec.frame),
            ));
        }
        let emb = checked_embedding(rec.embedding, &mut dim, line)?;
        frames.entry(rec.frame).or_default().push((rec.id, emb));
    }
    Ok(frames
        .into_iter()
        .map(|(frame, instances)| LabeledFrame { frame, instances })
        .collect())
}

pub fn read_labeled_embeddings(path: impl AsRef<Path>) -> Result<Vec<LabeledFrame>> {
    let path = path.as_ref();
    parse_labeled_embeddings(&read_text(path)?).map_err(|e| e.in_file(path))
}

pub fn format_labeled_embeddings(frames: &[LabeledFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        for (id, emb) in &f.instances {
            let line = LabeledEmbeddingLine {
                frame: f.frame,
                id: *id,
                embedding: emb.as_slice().to_vec(),
            };
            out.push_str(&serde_json::to_string(&line).expect("plain data serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn write_labeled_embeddings(path: impl AsRef<Path>, frames: &[LabeledFrame]) -> Result<()> {
    write_text(path.as_ref(), &format_labeled_embeddings(frames))
}

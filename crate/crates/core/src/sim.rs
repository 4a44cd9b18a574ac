//! Synthetic scenes with known identities, and a detector stub whose recall
//! depends on the proposals it is given.
//!
//! Objects move at constant velocity and bounce off the image borders.
//! Every identity owns a random unit prototype; each visible instance gets
//! `normalize(prototype + noise)` as its embedding.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed::{Embedding, LabeledFrame};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::io::{Detection, FrameMap, MotRecord, TrackBox};
use crate::tracker::{FrameResult, Tracker, TrackerParams};

// Independent random streams derived from the scenario seed, so switching
// on detector noise never changes the trajectories.
const MOTION_STREAM: u64 = 0x6d6f_7469_6f6e;
const APPEARANCE_STREAM: u64 = 0x6170_7065_6172;
const DETECTOR_STREAM: u64 = 0x6465_7465_6374;
const OCCLUSION_STREAM: u64 = 0x6f63_636c_7564;

fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

/// Frames `[start, start + duration)` during which `object` is invisible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occlusion {
    pub start: u64,
    pub duration: u64,
    /// 1-based object id.
    pub object: u64,
}

impl Occlusion {
    fn covers(&self, frame: u64, object: u64) -> bool {
        object == self.object && frame >= self.start && frame < self.start + self.duration
    }
}

fn default_width() -> f64 {
    640.0
}
fn default_height() -> f64 {
    480.0
}
fn default_objects() -> usize {
    10
}
fn default_frames() -> u64 {
    100
}
fn default_min_speed() -> f64 {
    0.5
}
fn default_max_speed() -> f64 {
    4.0
}
fn default_min_size() -> f64 {
    30.0
}
fn default_max_size() -> f64 {
    70.0
}
fn default_dim() -> usize {
    128
}
fn default_emb_noise() -> f64 {
    0.03
}

/// Scene description. Only `seed` has no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_height")]
    pub height: f64,
    #[serde(default = "default_objects")]
    pub objects: usize,
    #[serde(default = "default_frames")]
    pub frames: u64,
    /// Speed range in px/frame.
    #[serde(default = "default_min_speed")]
    pub min_speed: f64,
    #[serde(default = "default_max_speed")]
    pub max_speed: f64,
    /// Range of box widths and heights in px.
    #[serde(default = "default_min_size")]
    pub min_size: f64,
    #[serde(default = "default_max_size")]
    pub max_size: f64,
    #[serde(default)]
    pub occlusions: Vec<Occlusion>,
    /// Probability that a visible object is not detected.
    #[serde(default)]
    pub dropout: f64,
    /// Standard deviation of the per-corner detection noise (px).
    #[serde(default)]
    pub box_jitter: f64,
    /// Probability that a frame contains one spurious detection.
    #[serde(default)]
    pub false_positive_rate: f64,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    /// Per-component standard deviation added to prototypes.
    #[serde(default = "default_emb_noise")]
    pub embedding_noise: f64,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            width: default_width(),
            height: default_height(),
            objects: default_objects(),
            frames: default_frames(),
            min_speed: default_min_speed(),
            max_speed: default_max_speed(),
            min_size: default_min_size(),
            max_size: default_max_size(),
            occlusions: Vec::new(),
            dropout: 0.0,
            box_jitter: 0.0,
            false_positive_rate: 0.0,
            embedding_dim: default_dim(),
            embedding_noise: default_emb_noise(),
            seed: 0,
        }
    }
}

impl ScenarioParams {
    /// Detector noise off: detections are exactly the visible ground truth.
    pub fn is_oracle(&self) -> bool {
        self.dropout == 0.0 && self.box_jitter == 0.0 && self.false_positive_rate == 0.0
    }

    /// Appends `count` occlusions of random objects with durations drawn
    /// from `min_len..=max_len`.
    pub fn with_random_occlusions(mut self, count: usize, min_len: u64, max_len: u64) -> Self {
        let mut rng = stream(self.seed, OCCLUSION_STREAM);
        if self.objects == 0 || self.frames < 3 || min_len == 0 || min_len > max_len {
            return self;
        }
        for _ in 0..count {
            let duration = rng.random_range(min_len..=max_len).min(self.frames - 2);
            let start = rng.random_range(2..=self.frames - duration);
            let object = rng.random_range(1..=self.objects as u64);
            self.occlusions.push(Occlusion {
                start,
                duration,
                object,
            });
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let rate = |name: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be in [0, 1], got {v}")))
            }
        };
        rate("dropout", self.dropout)?;
        rate("false_positive_rate", self.false_positive_rate)?;
        if !(self.width.is_finite() && self.height.is_finite()) {
            return Err(Error::param("width", "image size must be finite"));
        }
        if !(self.min_size >= 1.0 && self.min_size <= self.max_size) {
            return Err(Error::param("min_size", "need 1 <= min_size <= max_size"));
        }
        if self.max_size >= self.width.min(self.height) {
            return Err(Error::param("max_size", "boxes must fit inside the image"));
        }
        if !(self.min_speed >= 0.0 && self.min_speed <= self.max_speed && self.max_speed.is_finite()) {
            return Err(Error::param("min_speed", "need 0 <= min_speed <= max_speed"));
        }
        if !(self.box_jitter >= 0.0 && self.box_jitter.is_finite()) {
            return Err(Error::param("box_jitter", "must be finite and >= 0"));
        }
        if !(self.embedding_noise >= 0.0 && self.embedding_noise.is_finite()) {
            return Err(Error::param("embedding_noise", "must be finite and >= 0"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::param("embedding_dim", "must be >= 1"));
        }
        for o in &self.occlusions {
            if o.duration < 1 {
                return Err(Error::param("occlusions", "durations must be >= 1"));
            }
            if o.object < 1 || o.object > self.objects as u64 {
                return Err(Error::param("occlusions", format!("object {} does not exist", o.object)));
            }
        }
        Ok(())
    }
}

/// A visible object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SimObject {
    pub id: u64,
    pub bbox: BBox,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: ScenarioParams,
    /// Visible objects per frame, in id order. Every frame `1..=frames` has an entry.
    pub truth: FrameMap<SimObject>,
    pub detections: FrameMap<Detection>,
    /// `(frame, id)` pairs at which an object reflected off a border.
    pub bounces: BTreeSet<(u64, u64)>,
    pub prototypes: Vec<Embedding>,
}

impl Scenario {
    pub fn ground_truth(&self) -> FrameMap<TrackBox> {
        self.truth
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(&f, v)| (f, v.iter().map(|o| TrackBox { id: o.id, bbox: o.bbox }).collect()))
            .collect()
    }

    pub fn ground_truth_records(&self) -> Vec<MotRecord> {
        self.truth
            .iter()
            .flat_map(|(&f, v)| v.iter().map(move |o| MotRecord::from_bbox(f, o.id as i64, &o.bbox, 1.0)))
            .collect()
    }

    pub fn detection_records(&self) -> Vec<MotRecord> {
        self.detections
            .iter()
            .flat_map(|(&f, v)| v.iter().map(move |d| MotRecord::from_bbox(f, -1, &d.bbox, d.score)))
            .collect()
    }

    /// Identity-labeled embeddings of all visible instances.
    pub fn labeled_frames(&self) -> Vec<LabeledFrame> {
        self.truth
            .iter()
            .map(|(&frame, v)| LabeledFrame {
                frame,
                instances: v.iter().map(|o| (o.id, o.embedding.clone())).collect(),
            })
            .collect()
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(e) = Embedding::new(v) {
            return e;
        }
    }
}

struct Mover {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
}

impl Mover {
    /// Advances one frame; returns whether a border was hit.
    fn advance(&mut self, width: f64, height: f64) -> bool {
        fn axis(pos: &mut f64, vel: &mut f64, size: f64, limit: f64) -> bool {
            *pos += *vel;
            if *pos < 0.0 {
                *pos = -*pos;
                *vel = -*vel;
                true
            } else if *pos + size > limit {
                *pos -= 2.0 * (*pos + size - limit);
                *vel = -*vel;
                true
            } else {
                false
            }
        }
        let bx = axis(&mut self.x, &mut self.vx, self.w, width);
        let by = axis(&mut self.y, &mut self.vy, self.h, height);
        bx || by
    }

    fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.x + self.w, self.y + self.h).expect("mover boxes stay valid")
    }
}

/// Builds a scene: ground truth plus a detection stream with embeddings.
pub fn generate(params: &ScenarioParams) -> Result<Scenario> {
    params.validate()?;
    let mut motion = stream(params.seed, MOTION_STREAM);
    let mut appearance = stream(params.seed, APPEARANCE_STREAM);
    let mut detector = stream(params.seed, DETECTOR_STREAM);

    let mut movers: Vec<Mover> = (0..params.objects)
        .map(|_| {
            let w = motion.random_range(params.min_size..=params.max_size);
            let h = motion.random_range(params.min_size..=params.max_size);
            let x = motion.random_range(0.0..=params.width - w);
            let y = motion.random_range(0.0..=params.height - h);
            let speed = motion.random_range(params.min_speed..=params.max_speed);
            let heading = motion.random_range(0.0..std::f64::consts::TAU);
            Mover {
                x,
                y,
                w,
                h,
                vx: speed * heading.cos(),
                vy: speed * heading.sin(),
            }
        })
        .collect();
    let prototypes: Vec<Embedding> = (0..params.objects)
        .map(|_| random_unit(&mut appearance, params.embedding_dim))
        .collect();
    let noise = Normal::new(0.0, params.embedding_noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let jitter = Normal::new(0.0, params.box_jitter.max(f64::MIN_POSITIVE)).expect("finite sigma");

    let mut truth = BTreeMap::new();
    let mut detections = BTreeMap::new();
    let mut bounces = BTreeSet::new();
    for frame in 1..=params.frames {
        if frame > 1 {
            for (i, m) in movers.iter_mut().enumerate() {
                if m.advance(params.width, params.height) {
                    bounces.insert((frame, i as u64 + 1));
                }
            }
        }
        let mut visible = Vec::new();
        for (i, m) in movers.iter().enumerate() {
            let id = i as u64 + 1;
            if params.occlusions.iter().any(|o| o.covers(frame, id)) {
                continue;
            }
            let proto = &prototypes[i];
            let embedding = if params.embedding_noise > 0.0 {
                let v = proto.as_slice().iter().map(|p| p + noise.sample(&mut appearance)).collect();
                Embedding::new(v).unwrap_or_else(|_| proto.clone())
            } else {
                proto.clone()
            };
            visible.push(SimObject {
                id,
                bbox: m.bbox(),
                embedding,
            });
        }

        let mut dets = Vec::new();
        for o in &visible {
            if params.dropout > 0.0 && detector.random_bool(params.dropout) {
                continue;
            }
            let (bbox, score) = if params.box_jitter > 0.0 {
                let c = o.bbox.corners();
                let mut j = |v: f64| v + jitter.sample(&mut detector);
                let b = BBox::repaired(j(c[0]), j(c[1]), j(c[2]), j(c[3]), 1.0).expect("finite jitter");
                (b, detector.random_range(0.5..=1.0))
            } else {
                (o.bbox, 1.0)
            };
            dets.push(Detection {
                frame,
                bbox,
                score,
                embedding: Some(o.embedding.clone()),
            });
        }
        if params.false_positive_rate > 0.0 && detector.random_bool(params.false_positive_rate) {
            let w = detector.random_range(params.min_size..=params.max_size);
            let h = detector.random_range(params.min_size..=params.max_size);
            let x = detector.random_range(0.0..=params.width - w);
            let y = detector.random_range(0.0..=params.height - h);
            dets.push(Detection {
                frame,
                bbox: BBox::new(x, y, x + w, y + h)?,
                score: detector.random_range(0.3..=0.9),
                embedding: Some(random_unit(&mut detector, params.embedding_dim)),
            });
        }
        truth.insert(frame, visible);
        if !dets.is_empty() {
            detections.insert(frame, dets);
        }
    }

    Ok(Scenario {
        params: params.clone(),
        truth,
        detections,
        bounces,
        prototypes,
    })
}

/// Detector stub for one frame. An object is detected when some proposal
/// overlaps it with IoU >= `gate_iou`, otherwise with probability
/// `recall_floor`.
///
/// One uniform draw is consumed per object whether or not it is gated, so
/// runs with different proposals see the same random stream.
pub fn gated_detector<R: Rng>(
    frame: u64,
    objects: &[SimObject],
    proposals: &[BBox],
    gate_iou: f64,
    recall_floor: f64,
    rng: &mut R,
) -> Vec<Detection> {
    objects
        .iter()
        .filter_map(|o| {
            let lucky = rng.random::<f64>() < recall_floor;
            let gated = proposals.iter().any(|p| iou(p, &o.bbox) >= gate_iou);
            (gated || lucky).then(|| Detection {
                frame,
                bbox: o.bbox,
                score: 1.0,
                embedding: Some(o.embedding.clone()),
            })
        })
        .collect()
}

/// Settings of a detector/tracker feedback loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoop {
    pub gate_iou: f64,
    pub recall_floor: f64,
    /// Feed the tracker's proposals back to the detector.
    pub use_proposals: bool,
    pub seed: u64,
}

/// Runs the gated detector and the tracker frame by frame, the detector at
/// frame `t` seeing the proposals the tracker produced at `t - 1`.
pub fn run_closed_loop(scene: &Scenario, params: &TrackerParams, cfg: &ClosedLoop) -> Result<Vec<FrameResult>> {
    if !(cfg.gate_iou > 0.0 && cfg.gate_iou <= 1.0) {
        return Err(Error::param("gate_iou", "must be in (0, 1]"));
    }
    if !(0.0..=1.0).contains(&cfg.recall_floor) {
        return Err(Error::param("recall_floor", "must be in [0, 1]"));
    }
    let mut rng = stream(cfg.seed, DETECTOR_STREAM);
    let mut tracker = Tracker::new(*params)?;
    let mut proposals: Vec<BBox> = Vec::new();
    let mut results = Vec::with_capacity(scene.truth.len());
    for (&frame, objects) in &scene.truth {
        let offered: &[BBox] = if cfg.use_proposals { &proposals } else { &[] };
        let dets = gated_detector(frame, objects, offered, cfg.gate_iou, cfg.recall_floor, &mut rng);
        let r = tracker.step(frame, &dets)?;
        proposals = r.proposals.clone();
        results.push(r);
    }
    Ok(results)
}

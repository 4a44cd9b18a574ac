//! Online tracking: per frame, predict every live track, associate with the
//! frame's detections, update matched tracks, age the rest, spawn new ones,
//! and hand back the predicted boxes as proposals for the next frame.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::assoc::{build_cost_matrix, gate_and_assign, Candidate, CostParams};
use crate::embed::Embedding;
use crate::error::{Error, Result};
use crate::filter::{kf_init, kf_predict, kf_update, KalmanParams, KalmanState};
use crate::geometry::BBox;
use crate::io::{Detection, FrameMap, MotRecord, TrackBox};
use crate::timing::{StageTimes, TimingRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerParams {
    pub cost: CostParams,
    pub kalman: KalmanParams,
    /// Frames a lost track survives without a match.
    pub max_age: u32,
    /// Matches a track needs before it is reported.
    pub min_hits: u32,
    /// Weight of the old appearance when blending in a matched detection.
    pub emb_momentum: f64,
    /// Unmatched detections scoring below this start no track.
    pub score_floor: f64,
    /// Image size `(width, height)` used to clamp proposals.
    pub image_size: Option<(f64, f64)>,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            cost: CostParams::default(),
            kalman: KalmanParams::default(),
            max_age: 30,
            min_hits: 1,
            emb_momentum: 0.9,
            score_floor: 0.0,
            image_size: None,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        self.kalman.validate()?;
        if self.max_age < 1 {
            return Err(Error::param("max_age", "must be >= 1"));
        }
        if self.min_hits < 1 {
            return Err(Error::param("min_hits", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.emb_momentum) {
            return Err(Error::param("emb_momentum", "must be in [0, 1]"));
        }
        if !self.score_floor.is_finite() {
            return Err(Error::param("score_floor", "must be finite"));
        }
        if let Some((w, h)) = self.image_size {
            if !(w >= 1.0 && h >= 1.0 && w.is_finite() && h.is_finite()) {
                return Err(Error::param("image_size", "width and height must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Active,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: KalmanState,
    pub embedding: Option<Embedding>,
    pub hits: u32,
    pub age: u32,
    pub time_since_update: u32,
    pub status: TrackStatus,
    /// Box of the detection matched most recently.
    pub last_box: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub id: u64,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame: u64,
    /// Active tracks with enough hits, in ascending id order.
    pub outputs: Vec<TrackOutput>,
    /// Predicted boxes of every live track for the following frame.
    pub proposals: Vec<BBox>,
}

/// Single-sequence tracker state.
#[derive(Debug, Clone)]
pub struct Tracker {
    params: TrackerParams,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
    last_times: StageTimes,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
            last_times: StageTimes::default(),
        })
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    /// Live tracks (active and lost), in ascending id order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Stage timings of the most recent [`Tracker::step`].
    pub fn last_times(&self) -> StageTimes {
        self.last_times
    }

    fn check_detection(&self, frame: u64, i: usize, d: &Detection) -> Result<()> {
        if d.frame != frame {
            return Err(Error::frame(frame, format!("detection {i} is labeled frame {}", d.frame)));
        }
        if !d.score.is_finite() {
            return Err(Error::frame(frame, format!("detection {i} has non-finite score")));
        }
        if self.params.cost.uses_appearance() && d.embedding.is_none() {
            return Err(Error::frame(
                frame,
                format!("detection {i} has no embedding but the appearance weight is > 0"),
            ));
        }
        if let (Some(e), Some(t)) = (&d.embedding, self.tracks.iter().find_map(|t| t.embedding.as_ref())) {
            if e.dim() != t.dim() {
                return Err(Error::frame(
                    frame,
                    format!("detection {i} embedding has dimension {}, tracks use {}", e.dim(), t.dim()),
                ));
            }
        }
        Ok(())
    }

    /// Processes one frame.
    pub fn step(&mut self, frame: u64, detections: &[Detection]) -> Result<FrameResult> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::frame(frame, format!("frame index must exceed previous frame {last}")));
            }
        }
        for (i, d) in detections.iter().enumerate() {
            self.check_detection(frame, i, d)?;
        }
        let gap = self.last_frame.map_or(1, |last| (frame - last) as u32);
        let kp = self.params.kalman;

        let t0 = Instant::now();
        for t in &mut self.tracks {
            for _ in 0..gap {
                t.state = kf_predict(&t.state, &kp);
            }
        }

        let t1 = Instant::now();
        let cost = {
            let track_c: Vec<Candidate> = self
                .tracks
                .iter()
                .map(|t| Candidate {
                    bbox: t.state.bbox(),
                    embedding: t.embedding.as_ref(),
                })
                .collect();
            let det_c: Vec<Candidate> = detections
                .iter()
                .map(|d| Candidate {
                    bbox: d.bbox,
                    embedding: d.embedding.as_ref(),
                })
                .collect();
            build_cost_matrix(&track_c, &det_c, &self.params.cost)?
        };

        let t2 = Instant::now();
        let assignment = gate_and_assign(&cost, &self.params.cost)?;

        let t3 = Instant::now();
        let momentum = self.params.emb_momentum;
        for m in &assignment.matches {
            let d = &detections[m.detection];
            let t = &mut self.tracks[m.track];
            t.state = kf_update(&t.state, &d.bbox, &kp);
            t.embedding = match (&t.embedding, &d.embedding) {
                (Some(old), Some(new)) => Some(old.blend(new, momentum)),
                (None, new) => new.clone(),
                (old, None) => old.clone(),
            };
            t.status = TrackStatus::Active;
            t.hits += 1;
            t.age += gap;
            t.time_since_update = 0;
            t.last_box = d.bbox;
            t.confidence = d.score;
        }
        for &i in &assignment.unmatched_tracks {
            let t = &mut self.tracks[i];
            t.status = TrackStatus::Lost;
            t.age += gap;
            t.time_since_update += gap;
        }
        let max_age = self.params.max_age;
        self.tracks.retain(|t| t.time_since_update <= max_age);

        for &j in &assignment.unmatched_detections {
            let d = &detections[j];
            if d.score < self.params.score_floor {
                continue;
            }
            self.tracks.push(Track {
                id: self.next_id,
                state: kf_init(&d.bbox, &kp),
                embedding: d.embedding.clone(),
                hits: 1,
                age: 0,
                time_since_update: 0,
                status: TrackStatus::Active,
                last_box: d.bbox,
                confidence: d.score,
            });
            self.next_id += 1;
        }

        let outputs = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Active && t.hits >= self.params.min_hits)
            .map(|t| TrackOutput {
                id: t.id,
                bbox: t.last_box,
                confidence: t.confidence,
            })
            .collect();
        let proposals = self.proposals_for_next_frame();
        let t4 = Instant::now();

        self.last_times = StageTimes {
            predict: ms(t1 - t0),
            matrix: ms(t2 - t1),
            solve: ms(t3 - t2),
            update: ms(t4 - t3),
        };
        self.last_frame = Some(frame);
        Ok(FrameResult {
            frame,
            outputs,
            proposals,
        })
    }

    /// One-frame Kalman predictions of every live track, clamped to the
    /// image when its size is configured.
    pub fn proposals_for_next_frame(&self) -> Vec<BBox> {
        self.tracks
            .iter()
            .map(|t| {
                let b = kf_predict(&t.state, &self.params.kalman).bbox();
                match self.params.image_size {
                    Some((w, h)) => b.clamped(w, h),
                    None => b,
                }
            })
            .collect()
    }
}

/// Tracks a whole detection stream, stepping every frame from the first to
/// the last listed one (frames absent from the map are empty).
pub fn run_sequence(stream: &FrameMap<Detection>, params: &TrackerParams) -> Result<(Vec<FrameResult>, TimingRecord)> {
    let mut tracker = Tracker::new(*params)?;
    let mut results = Vec::new();
    let mut timing = TimingRecord::default();
    let (Some(&first), Some(&last)) = (stream.keys().next(), stream.keys().next_back()) else {
        return Ok((results, timing));
    };
    let empty = Vec::new();
    for frame in first..=last {
        let dets = stream.get(&frame).unwrap_or(&empty);
        let r = tracker.step(frame, dets)?;
        timing.push(tracker.last_times());
        results.push(r);
    }
    Ok((results, timing))
}

/// Flattens tracker outputs into trajectories.
pub fn hypothesis_tracks(results: &[FrameResult]) -> FrameMap<TrackBox> {
    results
        .iter()
        .filter(|r| !r.outputs.is_empty())
        .map(|r| {
            (
                r.frame,
                r.outputs.iter().map(|o| TrackBox { id: o.id, bbox: o.bbox }).collect(),
            )
        })
        .collect()
}

/// Tracker outputs as MOT hypothesis rows.
pub fn hypothesis_records(results: &[FrameResult]) -> Vec<MotRecord> {
    results
        .iter()
        .flat_map(|r| {
            r.outputs
                .iter()
                .map(move |o| MotRecord::from_bbox(r.frame, o.id as i64, &o.bbox, o.confidence))
        })
        .collect()
}

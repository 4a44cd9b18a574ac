//! Per-stage wall-clock accounting of tracking steps and the synthetic
//! scaling benchmark built on it.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sim::{generate, ScenarioParams};
use crate::tracker::{Tracker, TrackerParams};

/// Milliseconds spent in each stage of one tracking step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub predict: f64,
    pub matrix: f64,
    pub solve: f64,
    pub update: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.predict + self.matrix + self.solve + self.update
    }

    fn map2(&self, o: &StageTimes, f: impl Fn(f64, f64) -> f64) -> StageTimes {
        StageTimes {
            predict: f(self.predict, o.predict),
            matrix: f(self.matrix, o.matrix),
            solve: f(self.solve, o.solve),
            update: f(self.update, o.update),
        }
    }

    fn scale(&self, k: f64) -> StageTimes {
        self.map2(self, |a, _| a * k)
    }

    /// Name of the most expensive stage.
    pub fn dominant(&self) -> &'static str {
        [
            ("predict", self.predict),
            ("matrix", self.matrix),
            ("solve", self.solve),
            ("update", self.update),
        ]
        .into_iter()
        .fold(("predict", f64::NEG_INFINITY), |best, s| if s.1 > best.1 { s } else { best })
        .0
    }
}

/// Stage times of every processed frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub frames: Vec<StageTimes>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub frames: usize,
    pub mean_ms: StageTimes,
    pub max_ms: StageTimes,
    pub total_ms: f64,
    pub fps: f64,
}

impl TimingRecord {
    pub fn push(&mut self, t: StageTimes) {
        self.frames.push(t);
    }

    pub fn summary(&self) -> TimingSummary {
        let n = self.frames.len();
        let sum = self
            .frames
            .iter()
            .fold(StageTimes::default(), |acc, t| acc.map2(t, |a, b| a + b));
        let max = self
            .frames
            .iter()
            .fold(StageTimes::default(), |acc, t| acc.map2(t, f64::max));
        let total_ms = sum.total();
        TimingSummary {
            frames: n,
            mean_ms: if n > 0 { sum.scale(1.0 / n as f64) } else { sum },
            max_ms: max,
            total_ms,
            fps: if total_ms > 0.0 { 1e3 * n as f64 / total_ms } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub tracks: usize,
    pub dim: usize,
    pub frames: u64,
    pub repeats: usize,
    pub seed: u64,
}

/// Median and 95th percentile over repeats of the mean per-frame stage times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub tracks: usize,
    pub dim: usize,
    pub frames: u64,
    pub repeats: usize,
    pub median_ms: StageTimes,
    pub p95_ms: StageTimes,
    pub step_median_ms: f64,
    pub step_p95_ms: f64,
}

fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = (q * (values.len() - 1) as f64).round() as usize;
    values[rank]
}

/// Scene with `tracks` objects spread at constant density, so matching
/// difficulty does not change with the object count.
pub fn bench_scenario(cfg: &BenchConfig) -> ScenarioParams {
    let side = 160.0 * (cfg.tracks.max(1) as f64).sqrt();
    ScenarioParams {
        width: side,
        height: side,
        objects: cfg.tracks,
        frames: cfg.frames,
        embedding_dim: cfg.dim,
        embedding_noise: 0.02,
        box_jitter: 1.0,
        seed: cfg.seed,
        ..ScenarioParams::default()
    }
}

/// Tracks a synthetic scene `repeats` times and summarizes stage timings.
/// The first frame, which only spawns tracks, is excluded.
pub fn bench_point(cfg: &BenchConfig, params: &TrackerParams) -> Result<BenchPoint> {
    let scene = generate(&bench_scenario(cfg))?;
    let repeats = cfg.repeats.max(1);
    let mut runs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut tracker = Tracker::new(*params)?;
        let mut record = TimingRecord::default();
        for (&frame, dets) in &scene.detections {
            tracker.step(frame, dets)?;
            if frame > 1 {
                record.push(tracker.last_times());
            }
        }
        runs.push(record.summary().mean_ms);
    }
    let stage = |f: fn(&StageTimes) -> f64, q: f64| {
        let mut v: Vec<f64> = runs.iter().map(f).collect();
        percentile(&mut v, q)
    };
    let pick = |q: f64| StageTimes {
        predict: stage(|t| t.predict, q),
        matrix: stage(|t| t.matrix, q),
        solve: stage(|t| t.solve, q),
        update: stage(|t| t.update, q),
    };
    Ok(BenchPoint {
        tracks: cfg.tracks,
        dim: cfg.dim,
        frames: cfg.frames,
        repeats,
        median_ms: pick(0.5),
        p95_ms: pick(0.95),
        step_median_ms: stage(StageTimes::total, 0.5),
        step_p95_ms: stage(StageTimes::total, 0.95),
    })
}

//! Flat TOML run configuration with `key=value` overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use proptrack::{CostParams, KalmanParams, MiningParams, TrackerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Mot,
    Kitti,
}

/// Every key is optional in the file; absent keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub alpha: f64,
    pub beta: f64,
    pub max_cost: f64,
    pub process_noise_pos: f64,
    pub process_noise_vel: f64,
    pub measurement_noise: f64,
    pub initial_vel_uncertainty: f64,
    pub max_age: u32,
    pub min_hits: u32,
    pub emb_momentum: f64,
    pub score_floor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_height: Option<f64>,
    pub batch_frames: usize,
    pub window: usize,
    pub min_identities: usize,
    pub min_instances: usize,
    pub margin: f64,
    pub retry_budget: usize,
    pub format: Format,
    pub kitti_type: String,
    pub iou_threshold: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dets: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embs: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<PathBuf>,
    pub gt: Vec<PathBuf>,
    pub hyp: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labeled_embs: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        let t = TrackerParams::default();
        let m = MiningParams::default();
        Self {
            alpha: t.cost.alpha,
            beta: t.cost.beta,
            max_cost: t.cost.max_cost,
            process_noise_pos: t.kalman.process_noise_pos,
            process_noise_vel: t.kalman.process_noise_vel,
            measurement_noise: t.kalman.measurement_noise,
            initial_vel_uncertainty: t.kalman.initial_vel_uncertainty,
            max_age: t.max_age,
            min_hits: t.min_hits,
            emb_momentum: t.emb_momentum,
            score_floor: t.score_floor,
            image_width: t.image_size.map(|s| s.0),
            image_height: t.image_size.map(|s| s.1),
            batch_frames: m.batch_frames,
            window: m.window,
            min_identities: m.min_identities,
            min_instances: m.min_instances,
            margin: m.margin,
            retry_budget: m.retry_budget,
            format: Format::Mot,
            kitti_type: "Car".to_string(),
            iou_threshold: proptrack::metrics::DEFAULT_IOU_THRESHOLD,
            seed: 0,
            dets: None,
            embs: None,
            out: None,
            timing: None,
            gt: Vec::new(),
            hyp: Vec::new(),
            report: None,
            labeled_embs: None,
        }
    }
}

/// `(key, description)` for every config key, in help order.
pub const KEYS: &[(&str, &str)] = &[
    ("alpha", "weight of the IoU distance in the association cost"),
    ("beta", "weight of the embedding cosine distance; 0 disables appearance"),
    ("max_cost", "matches costing more than this are dropped"),
    ("process_noise_pos", "Kalman process noise on corner positions, px"),
    ("process_noise_vel", "Kalman process noise on corner velocities, px/frame"),
    ("measurement_noise", "Kalman observation noise per corner coordinate, px"),
    ("initial_vel_uncertainty", "velocity prior of a new track, px/frame"),
    ("max_age", "frames a track survives without a match"),
    ("min_hits", "matches needed before a track is reported"),
    ("emb_momentum", "weight of the old embedding in the running average"),
    ("score_floor", "detections scoring below this never start a track"),
    ("image_width", "image width for clamping proposals; set with image_height"),
    ("image_height", "image height for clamping proposals; set with image_width"),
    ("batch_frames", "frames sampled per mining batch"),
    ("window", "length of the frame window a batch is drawn from"),
    ("min_identities", "identities a batch must contain"),
    ("min_instances", "instances each identity needs in a batch"),
    ("margin", "triplet loss margin"),
    ("retry_budget", "batch draws before mining gives up"),
    ("format", "file format of detections, ground truth and hypotheses: mot or kitti"),
    ("kitti_type", "object type kept when reading KITTI files"),
    ("iou_threshold", "minimum IoU for a ground truth / hypothesis match"),
    ("seed", "seed for batch sampling"),
    ("dets", "detection file (track)"),
    ("embs", "embedding JSON Lines sidecar of the detections (track)"),
    ("out", "hypothesis output file (track)"),
    ("timing", "timing JSON output; defaults to <out>.timing.json (track)"),
    ("gt", "list of ground truth files (eval)"),
    ("hyp", "list of hypothesis files, paired with gt (eval)"),
    ("report", "JSON report output (eval)"),
    ("labeled_embs", "identity-labeled embedding JSON Lines file (mine)"),
];

impl Config {
    /// Reads `path` (if any) and applies `key=value` overrides. Override
    /// values use TOML syntax; a bare word is taken as a string.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let Some((key, value)) = o.split_once('=') else {
                bail!("override `{o}` is not of the form key=value");
            };
            let key = key.trim();
            let value = value.trim();
            let parsed = format!("v = {value}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_string()));
            table.insert(key.to_string(), parsed);
        }
        let cfg = Config::deserialize(toml::Value::Table(table)).context("invalid configuration")?;
        cfg.tracker_params()?;
        cfg.mining_params().validate()?;
        if !(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0) {
            bail!("iou_threshold must be in (0, 1], got {}", cfg.iou_threshold);
        }
        Ok(cfg)
    }

    pub fn tracker_params(&self) -> anyhow::Result<TrackerParams> {
        let image_size = match (self.image_width, self.image_height) {
            (Some(w), Some(h)) => Some((w, h)),
            (None, None) => None,
            _ => bail!("image_width and image_height must be set together"),
        };
        let p = TrackerParams {
            cost: CostParams {
                alpha: self.alpha,
                beta: self.beta,
                max_cost: self.max_cost,
            },
            kalman: KalmanParams {
                process_noise_pos: self.process_noise_pos,
                process_noise_vel: self.process_noise_vel,
                measurement_noise: self.measurement_noise,
                initial_vel_uncertainty: self.initial_vel_uncertainty,
            },
            max_age: self.max_age,
            min_hits: self.min_hits,
            emb_momentum: self.emb_momentum,
            score_floor: self.score_floor,
            image_size,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn mining_params(&self) -> MiningParams {
        MiningParams {
            batch_frames: self.batch_frames,
            window: self.window,
            min_identities: self.min_identities,
            min_instances: self.min_instances,
            margin: self.margin,
            retry_budget: self.retry_budget,
        }
    }
}

/// The key reference appended to `--help`.
pub fn keys_help() -> String {
    let defaults = toml::Table::try_from(Config::default()).expect("default config serializes");
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (flat TOML; override with --set key=value):\n");
    for (key, doc) in KEYS {
        let default = defaults.get(*key).map_or_else(|| "unset".to_string(), |v| v.to_string());
        let _ = writeln!(out, "  {key:<width$}  {doc} [default: {default}]");
    }
    out
}

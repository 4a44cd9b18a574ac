//! Online multi-object tracking by detection.
//!
//! Tracks carry a constant-velocity Kalman filter over two box corners and a
//! smoothed appearance embedding. Each frame, detections are matched to the
//! tracks' predicted boxes by a weighted sum of IoU distance and cosine
//! distance, solved with the Hungarian method and gated by a maximum cost.
//! The predicted boxes double as region proposals for the next frame.
//!
//! Alongside the tracker live the pieces needed to train and evaluate it:
//! batch-hard triplet mining, CLEAR-MOT metrics, MOT/KITTI file formats and
//! a synthetic scene generator.

pub mod assoc;
pub mod embed;
pub mod error;
pub mod filter;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod sim;
pub mod timing;
pub mod tracker;

pub use assoc::{Assignment, CostMatrix, CostParams};
pub use embed::{Embedding, LabeledBatch, MiningParams, Triplet};
pub use error::{Error, Result};
pub use filter::{KalmanParams, KalmanState};
pub use geometry::BBox;
pub use io::{Detection, FrameMap, TrackBox};
pub use metrics::MotReport;
pub use sim::{Scenario, ScenarioParams};
pub use timing::{StageTimes, TimingRecord};
pub use tracker::{FrameResult, Track, Tracker, TrackerParams};

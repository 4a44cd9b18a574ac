//! CLEAR-MOT and identity metrics.
//!
//! Per frame, the correspondence each ground-truth object held most recently
//! is kept while its IoU stays at or above the threshold. Remaining objects
//! and hypotheses are matched by a minimum-IoU-distance assignment restricted
//! to pairs above the threshold.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::assoc::{hungarian_solve, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::io::{FrameMap, TrackBox};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Fraction of its lifespan above which a trajectory is mostly tracked.
const MOSTLY_TRACKED: f64 = 0.8;
/// Fraction of its lifespan at or below which a trajectory is mostly lost.
const MOSTLY_LOST: f64 = 0.2;

/// Raw counts of one or more evaluated sequences. Reports over several
/// sequences are formed by adding counts, never by averaging ratios.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MotCounts {
    pub gt_count: u64,
    pub hyp_count: u64,
    pub matches: u64,
    pub fp: u64,
    pub fn_: u64,
    pub id_switches: u64,
    pub iou_sum: f64,
    pub gt_tracks: u64,
    pub mostly_tracked: u64,
    pub mostly_lost: u64,
    /// Correctly identified detections under the best global id mapping.
    pub idtp: u64,
}

impl std::ops::Add for MotCounts {
    type Output = MotCounts;

    fn add(self, o: MotCounts) -> MotCounts {
        MotCounts {
            gt_count: self.gt_count + o.gt_count,
            hyp_count: self.hyp_count + o.hyp_count,
            matches: self.matches + o.matches,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            id_switches: self.id_switches + o.id_switches,
            iou_sum: self.iou_sum + o.iou_sum,
            gt_tracks: self.gt_tracks + o.gt_tracks,
            mostly_tracked: self.mostly_tracked + o.mostly_tracked,
            mostly_lost: self.mostly_lost + o.mostly_lost,
            idtp: self.idtp + o.idtp,
        }
    }
}

/// CLEAR-MOT metric bundle.
///
/// `mota` is a fraction (1.0 is perfect, may be negative). `motp` is the
/// mean matched IoU times 100. `precision`, `recall`, `mt`, `ml` and `idf1`
/// are percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotReport {
    pub mota: f64,
    pub motp: f64,
    pub fp: u64,
    pub fn_: u64,
    pub id_switches: u64,
    pub precision: f64,
    pub recall: f64,
    pub mt: f64,
    pub ml: f64,
    pub idf1: f64,
    pub gt_count: u64,
    pub counts: MotCounts,
}

fn pct(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        100.0 * num / den
    } else {
        0.0
    }
}

/// `(gt - errors) / gt`: the numerator is an exact integer, so the result
/// is a single correctly rounded division.
fn mota(gt: u64, errors: u64) -> f64 {
    (gt as f64 - errors as f64) / gt as f64
}

impl MotReport {
    pub fn from_counts(c: MotCounts) -> Result<Self> {
        if c.gt_count == 0 {
            return Err(Error::Evaluation("ground truth is empty".into()));
        }
        let gt = c.gt_count as f64;
        let mota = mota(c.gt_count, c.fp + c.fn_ + c.id_switches);
        Ok(Self {
            mota,
            motp: if c.matches > 0 {
                100.0 * c.iou_sum / c.matches as f64
            } else {
                0.0
            },
            fp: c.fp,
            fn_: c.fn_,
            id_switches: c.id_switches,
            precision: pct(c.matches as f64, (c.matches + c.fp) as f64),
            recall: pct(c.matches as f64, gt),
            mt: pct(c.mostly_tracked as f64, c.gt_tracks as f64),
            ml: pct(c.mostly_lost as f64, c.gt_tracks as f64),
            idf1: pct(2.0 * c.idtp as f64, (c.gt_count + c.hyp_count) as f64),
            gt_count: c.gt_count,
            counts: c,
        })
    }

    /// Pools several sequences by summing their counts.
    pub fn combine<'a>(reports: impl IntoIterator<Item = &'a MotReport>) -> Result<Self> {
        let total = reports
            .into_iter()
            .fold(MotCounts::default(), |acc, r| acc + r.counts);
        Self::from_counts(total)
    }

    /// Recomputes MOTA from the error counts.
    pub fn mota_from_counts(&self) -> f64 {
        mota(self.gt_count, self.fp + self.fn_ + self.id_switches)
    }

    /// Serializable view with the usual column names.
    pub fn columns(&self) -> ReportColumns {
        ReportColumns {
            mota: 100.0 * self.mota,
            motp: self.motp,
            fp: self.fp,
            fn_: self.fn_,
            ids: self.id_switches,
            mt: self.mt,
            ml: self.ml,
            idf1: self.idf1,
            precision: self.precision,
            recall: self.recall,
            gt: self.gt_count,
        }
    }

    /// Two-line aligned text table.
    pub fn table(&self) -> String {
        let c = self.columns();
        let header = ["MOTA", "MOTP", "FP", "FN", "IDs", "MT", "ML", "IDF1", "P", "R", "GT"];
        let values = [
            format!("{:.1}", c.mota),
            format!("{:.1}", c.motp),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.ids.to_string(),
            format!("{:.1}", c.mt),
            format!("{:.1}", c.ml),
            format!("{:.1}", c.idf1),
            format!("{:.1}", c.precision),
            format!("{:.1}", c.recall),
            c.gt.to_string(),
        ];
        let widths: Vec<usize> = header.iter().zip(&values).map(|(h, v)| h.len().max(v.len())).collect();
        let row = |cells: Vec<String>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        format!(
            "{}\n{}\n",
            row(header.iter().map(|s| s.to_string()).collect()),
            row(values.to_vec())
        )
    }
}

/// Report columns as percentages, named after the usual table headers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportColumns {
    #[serde(rename = "MOTA")]
    pub mota: f64,
    #[serde(rename = "MOTP")]
    pub motp: f64,
    #[serde(rename = "FP")]
    pub fp: u64,
    #[serde(rename = "FN")]
    pub fn_: u64,
    #[serde(rename = "IDs")]
    pub ids: u64,
    #[serde(rename = "MT")]
    pub mt: f64,
    #[serde(rename = "ML")]
    pub ml: f64,
    #[serde(rename = "IDF1")]
    pub idf1: f64,
    #[serde(rename = "P")]
    pub precision: f64,
    #[serde(rename = "R")]
    pub recall: f64,
    #[serde(rename = "GT")]
    pub gt: u64,
}

fn check_unique_ids(frames: &FrameMap<TrackBox>, what: &str) -> Result<()> {
    for (frame, boxes) in frames {
        let mut seen = BTreeSet::new();
        for b in boxes {
            if !seen.insert(b.id) {
                return Err(Error::Evaluation(format!("{what} id {} repeats in frame {frame}", b.id)));
            }
        }
    }
    Ok(())
}

/// Counts for one sequence. See [`evaluate`].
pub fn evaluate_counts(gt: &FrameMap<TrackBox>, hyp: &FrameMap<TrackBox>, iou_threshold: f64) -> Result<MotCounts> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::param("iou_threshold", "must be in (0, 1]"));
    }
    check_unique_ids(gt, "ground-truth")?;
    check_unique_ids(hyp, "hypothesis")?;
    let gt_count: u64 = gt.values().map(|v| v.len() as u64).sum();
    if gt_count == 0 {
        return Err(Error::Evaluation("ground truth is empty".into()));
    }

    let frames: BTreeSet<u64> = gt.keys().chain(hyp.keys()).copied().collect();
    let empty = Vec::new();

    let mut c = MotCounts {
        gt_count,
        hyp_count: hyp.values().map(|v| v.len() as u64).sum(),
        ..Default::default()
    };
    // Most recent hypothesis id matched to each ground-truth id.
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    let mut gt_len: BTreeMap<u64, u64> = BTreeMap::new();
    let mut gt_matched: BTreeMap<u64, u64> = BTreeMap::new();
    // (gt id, hyp id) -> frames where both exist with IoU >= threshold.
    let mut overlap: HashMap<(u64, u64), u64> = HashMap::new();
    let mut gt_ids = BTreeSet::new();
    let mut hyp_ids = BTreeSet::new();

    for f in frames {
        let g = gt.get(&f).unwrap_or(&empty);
        let h = hyp.get(&f).unwrap_or(&empty);
        for gb in g {
            *gt_len.entry(gb.id).or_insert(0) += 1;
            gt_ids.insert(gb.id);
        }
        for hb in h {
            hyp_ids.insert(hb.id);
        }
        let ious: Vec<Vec<f64>> = g.iter().map(|gb| h.iter().map(|hb| iou(&gb.bbox, &hb.bbox)).collect()).collect();
        for (i, gb) in g.iter().enumerate() {
            for (j, hb) in h.iter().enumerate() {
                if ious[i][j] >= iou_threshold {
                    *overlap.entry((gb.id, hb.id)).or_insert(0) += 1;
                }
            }
        }

        let mut g_pair: Vec<Option<usize>> = vec![None; g.len()];
        let mut h_taken = vec![false; h.len()];

        // Carry forward still-valid correspondences, in ground-truth id order.
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by_key(|&i| g[i].id);
        for &i in &order {
            let Some(&prev) = last_match.get(&g[i].id) else { continue };
            if let Some(j) = h.iter().position(|hb| hb.id == prev) {
                if !h_taken[j] && ious[i][j] >= iou_threshold {
                    g_pair[i] = Some(j);
                    h_taken[j] = true;
                }
            }
        }

        // Match the rest. Pairs below the threshold cost more than any
        // set of valid pairs, so the solver maximizes valid matches first.
        let free_g: Vec<usize> = (0..g.len()).filter(|&i| g_pair[i].is_none()).collect();
        let free_h: Vec<usize> = (0..h.len()).filter(|&j| !h_taken[j]).collect();
        if !free_g.is_empty() && !free_h.is_empty() {
            let forbidden = (free_g.len() + 1) as f64;
            let m = CostMatrix::from_fn(free_g.len(), free_h.len(), |a, b| {
                let v = ious[free_g[a]][free_h[b]];
                if v >= iou_threshold {
                    1.0 - v
                } else {
                    forbidden
                }
            });
            for (a, b) in hungarian_solve(&m)? {
                let (i, j) = (free_g[a], free_h[b]);
                if ious[i][j] >= iou_threshold {
                    g_pair[i] = Some(j);
                    h_taken[j] = true;
                }
            }
        }

        for (i, pair) in g_pair.iter().enumerate() {
            let gid = g[i].id;
            match pair {
                Some(j) => {
                    let hid = h[*j].id;
                    c.matches += 1;
                    c.iou_sum += ious[i][*j];
                    *gt_matched.entry(gid).or_insert(0) += 1;
                    if last_match.insert(gid, hid).is_some_and(|prev| prev != hid) {
                        c.id_switches += 1;
                    }
                }
                None => c.fn_ += 1,
            }
        }
        c.fp += h_taken.iter().filter(|t| !**t).count() as u64;
    }

    c.gt_tracks = gt_len.len() as u64;
    for (id, &len) in &gt_len {
        let covered = gt_matched.get(id).copied().unwrap_or(0) as f64 / len as f64;
        if covered >= MOSTLY_TRACKED {
            c.mostly_tracked += 1;
        }
        if covered <= MOSTLY_LOST {
            c.mostly_lost += 1;
        }
    }
    c.idtp = identity_true_positives(&gt_ids, &hyp_ids, &overlap)?;
    Ok(c)
}

/// Best one-to-one mapping of ground-truth ids to hypothesis ids by shared
/// frames; returns the number of detections it identifies correctly.
fn identity_true_positives(
    gt_ids: &BTreeSet<u64>,
    hyp_ids: &BTreeSet<u64>,
    overlap: &HashMap<(u64, u64), u64>,
) -> Result<u64> {
    if gt_ids.is_empty() || hyp_ids.is_empty() || overlap.is_empty() {
        return Ok(0);
    }
    let g: Vec<u64> = gt_ids.iter().copied().collect();
    let h: Vec<u64> = hyp_ids.iter().copied().collect();
    let weight = |a: usize, b: usize| overlap.get(&(g[a], h[b])).copied().unwrap_or(0);
    let m = CostMatrix::from_fn(g.len(), h.len(), |a, b| -(weight(a, b) as f64));
    Ok(hungarian_solve(&m)?.into_iter().map(|(a, b)| weight(a, b)).sum())
}

/// Evaluates hypothesis trajectories against ground truth.
///
/// Errors on empty ground truth and on an id repeated within one frame.
pub fn evaluate(gt: &FrameMap<TrackBox>, hyp: &FrameMap<TrackBox>, iou_threshold: f64) -> Result<MotReport> {
    MotReport::from_counts(evaluate_counts(gt, hyp, iou_threshold)?)
}

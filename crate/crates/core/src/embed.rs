//! Appearance embeddings: cosine distance for association, and batch-hard
//! triplet mining with the hinge triplet loss.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit-norm invariant.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Unit-length appearance vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// L2-normalizes `values`. Fails on empty, non-finite or zero vectors.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidEmbedding("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding("non-finite component".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidEmbedding(format!("cannot normalize vector of norm {norm}")));
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self(values))
    }

    /// Wraps a vector that is already unit-norm, without rescaling it.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding("empty or non-finite vector".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidEmbedding(format!("norm {norm} is not 1")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Squared Euclidean distance.
    pub fn sq_distance(&self, other: &Embedding) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Exponential moving average `momentum * self + (1 - momentum) * other`,
    /// renormalized. Falls back to `other` when the blend cancels out.
    pub fn blend(&self, other: &Embedding, momentum: f64) -> Embedding {
        let mixed: Vec<f64> = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| momentum * a + (1.0 - momentum) * b)
            .collect();
        Embedding::new(mixed).unwrap_or_else(|_| other.clone())
    }
}

/// `1 - <a, b>`, in `[0, 2]` for unit vectors.
pub fn cosine_distance(a: &Embedding, b: &Embedding) -> f64 {
    (1.0 - a.dot(b)).clamp(0.0, 2.0)
}

/// Batch sampling and loss settings for hard-negative mining.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    /// Frames drawn per batch.
    pub batch_frames: usize,
    /// Length of the consecutive-frame window the batch is drawn from.
    pub window: usize,
    /// Distinct identities required in a valid batch.
    pub min_identities: usize,
    /// Instances each of those identities needs.
    pub min_instances: usize,
    pub margin: f64,
    /// Windows tried before giving up.
    pub retry_budget: usize,
}

impl Default for MiningParams {
    fn default() -> Self {
        Self {
            batch_frames: 8,
            window: 16,
            min_identities: 8,
            min_instances: 4,
            margin: 0.2,
            retry_budget: 100,
        }
    }
}

impl MiningParams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_frames == 0 || self.batch_frames > self.window {
            return Err(Error::param("batch_frames", "must satisfy 1 <= batch_frames <= window"));
        }
        if self.min_identities < 2 {
            return Err(Error::param("min_identities", "must be >= 2"));
        }
        if self.min_instances < 2 {
            return Err(Error::param("min_instances", "must be >= 2"));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::param("margin", "must be finite and > 0"));
        }
        if self.retry_budget == 0 {
            return Err(Error::param("retry_budget", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub embedding: Embedding,
    pub identity: u64,
    pub frame: u64,
}

/// Embeddings with identity labels, the unit of triplet mining.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledBatch {
    items: Vec<LabeledItem>,
}

impl LabeledBatch {
    /// Checks that every embedding has the same dimension.
    pub fn new(items: Vec<LabeledItem>) -> Result<Self> {
        if let Some(first) = items.first() {
            let d = first.embedding.dim();
            if let Some(bad) = items.iter().find(|it| it.embedding.dim() != d) {
                return Err(Error::InvalidEmbedding(format!(
                    "batch mixes dimensions {d} and {}",
                    bad.embedding.dim()
                )));
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[LabeledItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn embeddings(&self) -> Vec<Embedding> {
        self.items.iter().map(|it| it.embedding.clone()).collect()
    }

    /// Instance count per identity.
    pub fn identity_counts(&self) -> BTreeMap<u64, usize> {
        let mut counts = BTreeMap::new();
        for it in &self.items {
            *counts.entry(it.identity).or_insert(0) += 1;
        }
        counts
    }

    /// True when at least `min_identities` identities have at least
    /// `min_instances` instances each.
    pub fn satisfies(&self, params: &MiningParams) -> bool {
        self.identity_counts()
            .values()
            .filter(|&&n| n >= params.min_instances)
            .count()
            >= params.min_identities
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// For every anchor, pairs the farthest same-identity item with the nearest
/// other-identity item (squared Euclidean distance, lowest index on ties).
///
/// Anchors without a same-identity partner or without any other identity in
/// the batch are skipped.
pub fn mine_hard_triplets(batch: &LabeledBatch) -> Vec<Triplet> {
    let items = batch.items();
    let mut out = Vec::new();
    for (a, anchor) in items.iter().enumerate() {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for (j, other) in items.iter().enumerate() {
            if j == a {
                continue;
            }
            let d = anchor.embedding.sq_distance(&other.embedding);
            if other.identity == anchor.identity {
                if hardest_pos.is_none_or(|(_, best)| d > best) {
                    hardest_pos = Some((j, d));
                }
            } else if hardest_neg.is_none_or(|(_, best)| d < best) {
                hardest_neg = Some((j, d));
            }
        }
        if let (Some((positive, _)), Some((negative, _))) = (hardest_pos, hardest_neg) {
            out.push(Triplet {
                anchor: a,
                positive,
                negative,
            });
        }
    }
    out
}

fn triplet_distances(t: &Triplet, embeddings: &[Embedding]) -> Result<(f64, f64)> {
    let get = |i: usize| {
        embeddings
            .get(i)
            .ok_or_else(|| Error::param("triplet", format!("index {i} out of range")))
    };
    let a = get(t.anchor)?;
    Ok((a.sq_distance(get(t.positive)?), a.sq_distance(get(t.negative)?)))
}

/// Mean hinge loss `[|a-p|^2 - |a-n|^2 + margin]_+` over the triplets.
pub fn triplet_loss(triplets: &[Triplet], embeddings: &[Embedding], margin: f64) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyTriplets);
    }
    let mut total = 0.0;
    for t in triplets {
        let (ap, an) = triplet_distances(t, embeddings)?;
        total += (ap - an + margin).max(0.0);
    }
    Ok(total / triplets.len() as f64)
}

/// Strict margin condition `|a-p|^2 + margin < |a-n|^2`.
pub fn margin_satisfied(a: &Embedding, p: &Embedding, n: &Embedding, margin: f64) -> bool {
    a.sq_distance(p) + margin < a.sq_distance(n)
}

/// One frame of identity-labeled embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub frame: u64,
    pub instances: Vec<(u64, Embedding)>,
}

/// Draws `batch_frames` frames from a random window of `window` consecutive
/// frames and keeps the first batch meeting the identity/instance quota.
///
/// Each rejected draw moves to a fresh random window.
pub fn sample_batch(sequence: &[LabeledFrame], params: &MiningParams, seed: u64) -> Result<LabeledBatch> {
    params.validate()?;
    if sequence.len() < params.window {
        return Err(Error::param(
            "window",
            format!("sequence has {} frames, window needs {}", sequence.len(), params.window),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = sequence.len() - params.window + 1;
    for _ in 0..params.retry_budget {
        let start = rng.random_range(0..starts);
        let mut picks = sample(&mut rng, params.window, params.batch_frames).into_vec();
        picks.sort_unstable();
        let items = picks
            .into_iter()
            .flat_map(|off| {
                let f = &sequence[start + off];
                f.instances.iter().map(move |(id, e)| LabeledItem {
                    embedding: e.clone(),
                    identity: *id,
                    frame: f.frame,
                })
            })
            .collect();
        let batch = LabeledBatch::new(items)?;
        if batch.satisfies(params) {
            return Ok(batch);
        }
    }
    Err(Error::NoValidBatch {
        attempts: params.retry_budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn item(v: &[f64], id: u64) -> LabeledItem {
        LabeledItem {
            embedding: e(v),
            identity: id,
            frame: 1,
        }
    }

    #[test]
    fn normalizes_on_construction() {
        assert_eq!(e(&[2.0, 0.0, 0.0]).as_slice(), &[1.0, 0.0, 0.0]);
        assert!(Embedding::new(vec![0.0, 0.0]).is_err());
        assert!(Embedding::new(vec![f64::NAN, 1.0]).is_err());
        assert!(Embedding::new(vec![]).is_err());
        assert!(Embedding::from_unit(vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn cosine_distance_examples() {
        let a = e(&[0.3, -0.4, 0.5]);
        assert!(cosine_distance(&a, &a).abs() < 1e-15);
        assert_eq!(cosine_distance(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])), 1.0);
        assert_eq!(cosine_distance(&e(&[1.0, 0.0]), &e(&[-1.0, 0.0])), 2.0);
    }

    #[test]
    fn blend_renormalizes() {
        let a = e(&[1.0, 0.0]);
        let b = e(&[0.0, 1.0]);
        let m = a.blend(&b, 0.5);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.as_slice()[0] - s).abs() < 1e-15 && (m.as_slice()[1] - s).abs() < 1e-15);
        let anti = e(&[-1.0, 0.0]);
        assert_eq!(a.blend(&anti, 0.5), anti);
    }

    #[test]
    fn two_by_two_batch_forces_partners() {
        let batch = LabeledBatch::new(vec![
            item(&[1.0, 0.1], 1),
            item(&[1.0, 0.3], 1),
            item(&[0.1, 1.0], 2),
            item(&[0.2, 1.0], 2),
        ])
        .unwrap();
        let t = mine_hard_triplets(&batch);
        assert_eq!(t.len(), 4);
        for (a, p) in [(0, 1), (1, 0), (2, 3), (3, 2)] {
            assert_eq!(t[a].anchor, a);
            assert_eq!(t[a].positive, p);
        }
    }

    #[test]
    fn hardest_positive_is_farthest() {
        // Anchor 0 has same-identity items at squared distance ~0.1 and ~0.9.
        let ang = |d2: f64| (1.0 - d2 / 2.0f64).acos();
        let at = |theta: f64| [theta.cos(), theta.sin(), 0.0];
        let batch = LabeledBatch::new(vec![
            item(&at(0.0), 7),
            item(&at(ang(0.1)), 7),
            item(&at(ang(0.9)), 7),
            item(&[0.0, 0.0, 1.0], 9),
            item(&[0.6, 0.0, 0.8], 9),
        ])
        .unwrap();
        let t = mine_hard_triplets(&batch);
        assert_eq!(t[0].positive, 2);
        assert!((batch.items()[0].embedding.sq_distance(&batch.items()[2].embedding) - 0.9).abs() < 1e-12);
        assert_eq!(t[0].negative, 4);
    }

    #[test]
    fn skips_anchor_without_partner() {
        let batch =
            LabeledBatch::new(vec![item(&[1.0, 0.0], 1), item(&[0.0, 1.0], 2), item(&[0.1, 1.0], 2)]).unwrap();
        let t = mine_hard_triplets(&batch);
        assert_eq!(t.iter().map(|t| t.anchor).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let batch = LabeledBatch::new(vec![
            item(&[1.0, 0.0], 1),
            item(&[0.0, 1.0], 1),
            item(&[0.0, -1.0], 1),
            item(&[-1.0, 0.0], 2),
            item(&[-1.0, 0.0], 2),
        ])
        .unwrap();
        let t = mine_hard_triplets(&batch);
        assert_eq!((t[0].positive, t[0].negative), (1, 3));
    }

    #[test]
    fn loss_examples() {
        let a = e(&[1.0, 0.0]);
        // a = p = n
        let embs = vec![a.clone(), a.clone(), a.clone()];
        let t = [Triplet {
            anchor: 0,
            positive: 1,
            negative: 2,
        }];
        assert_eq!(triplet_loss(&t, &embs, 0.2).unwrap(), 0.2);
        // Well separated: p = a, n orthogonal.
        let embs = vec![a.clone(), a.clone(), e(&[0.0, 1.0])];
        assert_eq!(triplet_loss(&t, &embs, 0.2).unwrap(), 0.0);
        // |a-p|^2 = 0.5 and |a-n|^2 = 0.3.
        let p = e(&[0.75, (1.0f64 - 0.75 * 0.75).sqrt()]);
        let n = e(&[0.85, -(1.0f64 - 0.85 * 0.85).sqrt()]);
        let embs = vec![a, p, n];
        assert!((triplet_loss(&t, &embs, 0.2).unwrap() - 0.4).abs() < 1e-12);
        assert!(matches!(triplet_loss(&[], &embs, 0.2), Err(Error::EmptyTriplets)));
        let bad = [Triplet {
            anchor: 0,
            positive: 1,
            negative: 5,
        }];
        assert!(triplet_loss(&bad, &embs, 0.2).is_err());
    }

    #[test]
    fn margin_condition_examples() {
        let a = e(&[1.0, 0.0]);
        let n = e(&[0.0, 1.0]);
        assert!(margin_satisfied(&a, &a, &n, 0.2));
        let p = e(&[0.6, 0.8]);
        assert!(!margin_satisfied(&a, &p, &p, 0.01));
        assert!(!margin_satisfied(&a, &a, &a, 0.2));
    }

    #[test]
    fn batch_validity() {
        let params = MiningParams {
            min_identities: 2,
            min_instances: 2,
            ..Default::default()
        };
        let two_each =
            LabeledBatch::new(vec![item(&[1.0], 1), item(&[1.0], 1), item(&[1.0], 2), item(&[1.0], 2)]).unwrap();
        assert!(two_each.satisfies(&params));
        let lopsided =
            LabeledBatch::new(vec![item(&[1.0], 1), item(&[1.0], 1), item(&[1.0], 1), item(&[1.0], 2)]).unwrap();
        assert!(!lopsided.satisfies(&params));
        assert!(LabeledBatch::new(vec![item(&[1.0], 1), item(&[1.0, 0.0], 2)]).is_err());
    }

    #[test]
    fn mining_params_validation() {
        assert!(MiningParams::default().validate().is_ok());
        for bad in [
            MiningParams { batch_frames: 17, ..Default::default() },
            MiningParams { min_identities: 1, ..Default::default() },
            MiningParams { min_instances: 1, ..Default::default() },
            MiningParams { margin: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn frames_with(ids: &[u64], n: usize) -> Vec<LabeledFrame> {
        (1..=n as u64)
            .map(|f| LabeledFrame {
                frame: f,
                instances: ids
                    .iter()
                    .map(|&id| (id, e(&[id as f64, 1.0, f as f64 * 0.01])))
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn sample_batch_cases() {
        let params = MiningParams::default();
        let ids: Vec<u64> = (1..=8).collect();
        let seq = frames_with(&ids, 20);
        let batch = sample_batch(&seq, &params, 3).unwrap();
        assert_eq!(batch.len(), 8 * 8);
        let frames: std::collections::BTreeSet<u64> = batch.items().iter().map(|i| i.frame).collect();
        assert_eq!(frames.len(), 8);
        assert!(frames.last().unwrap() - frames.first().unwrap() < 16);

        let lonely = frames_with(&[1], 20);
        assert!(matches!(
            sample_batch(&lonely, &params, 3),
            Err(Error::NoValidBatch { attempts: 100 })
        ));
        assert!(sample_batch(&seq[..10], &params, 3).is_err());
    }

    #[test]
    fn sample_batch_is_deterministic() {
        let ids: Vec<u64> = (1..=10).collect();
        let seq = frames_with(&ids, 100);
        let params = MiningParams::default();
        let a = sample_batch(&seq, &params, 42).unwrap();
        let b = sample_batch(&seq, &params, 42).unwrap();
        assert_eq!(a, b);
    }

    fn unit_vec(dim: usize) -> impl Strategy<Value = Embedding> {
        proptest::collection::vec(-1.0..1.0f64, dim)
            .prop_filter_map("zero vector", |v| Embedding::new(v).ok())
    }

    proptest! {
        #[test]
        fn squared_distance_is_twice_cosine_distance(a in unit_vec(16), b in unit_vec(16)) {
            prop_assert!((a.sq_distance(&b) - 2.0 * cosine_distance(&a, &b)).abs() <= 1e-9);
        }

        #[test]
        fn loss_is_non_negative(embs in proptest::collection::vec(unit_vec(4), 3..12), margin in 0.01..1.0f64) {
            let n = embs.len();
            let t: Vec<Triplet> = (0..n).map(|i| Triplet { anchor: i, positive: (i + 1) % n, negative: (i + 2) % n }).collect();
            prop_assert!(triplet_loss(&t, &embs, margin).unwrap() >= 0.0);
        }
    }
}

use std::collections::BTreeSet;

use proptest::prelude::*;

use proptrack::embed::{mine_hard_triplets, sample_batch, LabeledItem};
use proptrack::metrics::evaluate;
use proptrack::sim::generate;
use proptrack::tracker::{hypothesis_tracks, run_sequence};
use proptrack::{
    BBox, CostParams, Detection, Embedding, FrameMap, LabeledBatch, MiningParams, ScenarioParams, TrackBox, Tracker,
    TrackerParams, Triplet,
};

struct Walker {
    start: (f64, f64),
    vel: (f64, f64),
    size: f64,
}

impl Walker {
    fn at(&self, frame: u64) -> BBox {
        let t = frame as f64;
        let (x, y) = (self.start.0 + self.vel.0 * t, self.start.1 + self.vel.1 * t);
        BBox::new(x, y, x + self.size, y + self.size).unwrap()
    }
}

fn one_hot(i: usize, dim: usize) -> Embedding {
    Embedding::new((0..dim).map(|k| if k == i { 1.0 } else { 0.0 }).collect()).unwrap()
}

/// Oracle detections and ground truth for scripted walkers. `hidden` maps a
/// walker to the frames it is invisible; `teleport` moves a walker by an
/// offset from the given frame on.
fn script(
    walkers: &[Walker],
    frames: u64,
    hidden: &[(usize, std::ops::RangeInclusive<u64>)],
    teleport: Option<(usize, u64, f64)>,
) -> (FrameMap<Detection>, FrameMap<TrackBox>) {
    let mut dets = FrameMap::new();
    let mut gt = FrameMap::new();
    for f in 1..=frames {
        for (i, w) in walkers.iter().enumerate() {
            if hidden.iter().any(|(h, r)| *h == i && r.contains(&f)) {
                continue;
            }
            let mut b = w.at(f);
            if let Some((who, from, dx)) = teleport {
                if who == i && f >= from {
                    b = b.translated(dx, 0.0).unwrap();
                }
            }
            dets.entry(f).or_insert_with(Vec::new).push(Detection {
                frame: f,
                bbox: b,
                score: 1.0,
                embedding: Some(one_hot(i, walkers.len())),
            });
            gt.entry(f).or_insert_with(Vec::new).push(TrackBox { id: i as u64 + 1, bbox: b });
        }
    }
    (dets, gt)
}

fn walkers() -> Vec<Walker> {
    vec![
        Walker { start: (0.0, 0.0), vel: (3.0, 1.0), size: 40.0 },
        Walker { start: (400.0, 0.0), vel: (-3.0, 1.5), size: 40.0 },
        Walker { start: (0.0, 300.0), vel: (2.5, -2.0), size: 50.0 },
    ]
}

#[test]
fn no_switch_for_any_gap_up_to_max_age() {
    let params = TrackerParams::default();
    for who in 0..3 {
        for gap in 1..=u64::from(params.max_age) {
            let (dets, gt) = script(&walkers(), gap + 40, &[(who, 20..=19 + gap)], None);
            let (results, _) = run_sequence(&dets, &params).unwrap();
            let r = evaluate(&gt, &hypothesis_tracks(&results), 0.5).unwrap();
            assert_eq!((r.id_switches, r.fp, r.fn_), (0, 0, 0), "walker {who}, gap {gap}");
        }
    }
}

#[test]
fn no_switch_when_paths_cross_during_occlusion() {
    // Walkers 0 and 1 meet around frame 67; hide walker 0 across the crossing.
    let params = TrackerParams::default();
    for gap in [5, 10, 20, 30] {
        let (dets, gt) = script(&walkers(), 120, &[(0, 60..=59 + gap)], None);
        let (results, _) = run_sequence(&dets, &params).unwrap();
        let r = evaluate(&gt, &hypothesis_tracks(&results), 0.5).unwrap();
        assert_eq!(r.id_switches, 0, "gap {gap}");
    }
}

#[test]
fn appearance_rescues_a_displaced_reappearance() {
    let (dets, gt) = script(&walkers(), 60, &[(2, 20..=29)], Some((2, 30, 120.0)));
    let combined = TrackerParams::default();
    let position = TrackerParams {
        cost: CostParams { alpha: 1.0, beta: 0.0, ..CostParams::default() },
        ..TrackerParams::default()
    };
    let run = |p: &TrackerParams| {
        let (results, _) = run_sequence(&dets, p).unwrap();
        evaluate(&gt, &hypothesis_tracks(&results), 0.5).unwrap()
    };
    assert_eq!(run(&combined).id_switches, 0);
    assert_eq!(run(&position).id_switches, 1);
}

fn noisy(seed: u64) -> ScenarioParams {
    ScenarioParams {
        objects: 10,
        frames: 60,
        width: 400.0,
        height: 300.0,
        box_jitter: 2.0,
        dropout: 0.15,
        false_positive_rate: 0.5,
        embedding_dim: 16,
        embedding_noise: 0.1,
        seed,
        ..ScenarioParams::default()
    }
    .with_random_occlusions(5, 3, 20)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(16) })]

    #[test]
    fn tracking_is_deterministic(seed in 0u64..10_000) {
        let scene = generate(&noisy(seed)).unwrap();
        let params = TrackerParams { max_age: 10, ..TrackerParams::default() };
        let (a, _) = run_sequence(&scene.detections, &params).unwrap();
        let (b, _) = run_sequence(&scene.detections, &params).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(generate(&noisy(seed)).unwrap(), scene);
    }

    #[test]
    fn ids_increase_and_outputs_belong_to_live_tracks(seed in 0u64..10_000, max_age in 1u32..6) {
        let scene = generate(&noisy(seed)).unwrap();
        let mut tracker = Tracker::new(TrackerParams { max_age, ..TrackerParams::default() }).unwrap();
        let mut seen = BTreeSet::new();
        let mut newest = 0;
        let mut dead = BTreeSet::new();
        let mut prev_live = BTreeSet::new();
        for (&f, dets) in &scene.detections {
            let r = tracker.step(f, dets).unwrap();
            let live: BTreeSet<u64> = tracker.tracks().iter().map(|t| t.id).collect();
            for t in tracker.tracks() {
                if seen.insert(t.id) {
                    prop_assert!(t.id > newest, "id {} created after {}", t.id, newest);
                    newest = t.id;
                }
            }
            dead.extend(prev_live.difference(&live).copied());
            let mut ids = BTreeSet::new();
            for o in &r.outputs {
                prop_assert!(live.contains(&o.id), "output id {} is not a live track", o.id);
                prop_assert!(!dead.contains(&o.id), "output id {} was removed earlier", o.id);
                prop_assert!(ids.insert(o.id), "id {} reported twice in frame {}", o.id, f);
            }
            prev_live = live;
        }
    }

    #[test]
    fn relabeling_hypotheses_is_invisible_to_metrics(seed in 0u64..10_000, salt in 1u64..1000) {
        let scene = generate(&noisy(seed)).unwrap();
        let (results, _) = run_sequence(&scene.detections, &TrackerParams::default()).unwrap();
        let hyp = hypothesis_tracks(&results);
        let relabeled: FrameMap<TrackBox> = hyp
            .iter()
            .map(|(&f, v)| (f, v.iter().map(|t| TrackBox { id: t.id * 7919 + salt, bbox: t.bbox }).collect()))
            .collect();
        let gt = scene.ground_truth();
        let a = evaluate(&gt, &hyp, 0.5).unwrap();
        let b = evaluate(&gt, &relabeled, 0.5).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(a.mota, a.mota_from_counts());
    }

    #[test]
    fn generated_streams_yield_valid_batches(seed in 0u64..10_000) {
        let p = ScenarioParams { objects: 8, frames: 16, embedding_dim: 16, seed, ..ScenarioParams::default() };
        let scene = generate(&p).unwrap();
        let params = MiningParams::default();
        let batch = sample_batch(&scene.labeled_frames(), &params, seed).unwrap();
        prop_assert!(batch.satisfies(&params));
        prop_assert_eq!(batch, sample_batch(&scene.labeled_frames(), &params, seed).unwrap());
    }

    #[test]
    fn mining_matches_exhaustive_scan(
        rows in prop::collection::vec((0u64..6, prop::collection::vec(-2i32..=2, 3)), 2..40)
    ) {
        let items: Vec<LabeledItem> = rows
            .into_iter()
            .enumerate()
            .filter_map(|(k, (id, v))| {
                Embedding::new(v.into_iter().map(f64::from).collect())
                    .ok()
                    .map(|embedding| LabeledItem { embedding, identity: id, frame: k as u64 })
            })
            .collect();
        let batch = LabeledBatch::new(items).unwrap();
        let items = batch.items();
        let mut want = Vec::new();
        for a in 0..items.len() {
            let d = |j: usize| items[a].embedding.sq_distance(&items[j].embedding);
            let same = |j: usize| items[j].identity == items[a].identity;
            let pos = (0..items.len()).filter(|&j| j != a && same(j)).fold(None, |best: Option<usize>, j| match best {
                Some(b) if d(b) >= d(j) => Some(b),
                _ => Some(j),
            });
            let neg = (0..items.len()).filter(|&j| !same(j)).fold(None, |best: Option<usize>, j| match best {
                Some(b) if d(b) <= d(j) => Some(b),
                _ => Some(j),
            });
            if let (Some(positive), Some(negative)) = (pos, neg) {
                want.push(Triplet { anchor: a, positive, negative });
            }
        }
        prop_assert_eq!(mine_hard_triplets(&batch), want);
    }
}

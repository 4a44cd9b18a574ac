use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Serialize;

use proptrack::embed::{mine_hard_triplets, sample_batch, triplet_loss};
use proptrack::io::{self, KittiRecord};
use proptrack::metrics::{evaluate, ReportColumns};
use proptrack::timing::{bench_point, BenchConfig, BenchPoint, TimingSummary};
use proptrack::tracker::{hypothesis_records, run_sequence};
use proptrack::{Detection, FrameMap, MotReport, ScenarioParams, StageTimes, TrackBox, TrackerParams};

use crate::config::{Config, Format};
use crate::{table, CmdResult, Command, ConfigArgs, Failure, UsageContext};

pub fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::Track { dets, embs, out, timing, format, jobs, config } => {
            track(TrackArgs { dets, embs, out, timing, format, jobs }, &config)
        }
        Command::Eval { gt, hyp, format, iou_threshold, json, jobs, config } => {
            eval(EvalArgs { gt, hyp, format, iou_threshold, json, jobs }, &config)
        }
        Command::Simulate { scenario_config, seed, out_dir } => simulate(scenario_config.as_deref(), seed, &out_dir),
        Command::Mine { labeled_embs, json, config } => mine(labeled_embs, json, &config),
        Command::Bench { tracks, dim, frames, repeats, seed, json, config } => {
            bench(&tracks, dim, frames, repeats, seed, json, &config)
        }
    }
}

fn load(args: &ConfigArgs) -> CmdResult<Config> {
    Config::load(args.config.as_deref(), &args.overrides).usage()
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

fn pool(jobs: usize) -> CmdResult<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Usage(e.into()))
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.into()))?;
    text.push('\n');
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Data)
}

fn first_error<T>(results: Vec<CmdResult<T>>) -> CmdResult<Vec<T>> {
    results.into_iter().collect()
}

// ---------------------------------------------------------------------------
// track

struct TrackArgs {
    dets: Vec<PathBuf>,
    embs: Vec<PathBuf>,
    out: Vec<PathBuf>,
    timing: Vec<PathBuf>,
    format: Option<Format>,
    jobs: usize,
}

struct Sequence {
    dets: PathBuf,
    embs: Option<PathBuf>,
    out: PathBuf,
    timing: PathBuf,
}

#[derive(Serialize)]
struct FrameTiming {
    frame: u64,
    #[serde(flatten)]
    ms: StageTimes,
    total: f64,
}

#[derive(Serialize)]
struct TimingReport {
    frames: Vec<FrameTiming>,
    summary: TimingSummary,
}

fn or_config(flags: Vec<PathBuf>, cfg: &Option<PathBuf>) -> Vec<PathBuf> {
    if flags.is_empty() {
        cfg.iter().cloned().collect()
    } else {
        flags
    }
}

fn default_timing_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".timing.json");
    PathBuf::from(s)
}

fn track(args: TrackArgs, config: &ConfigArgs) -> CmdResult {
    let cfg = load(config)?;
    let params = cfg.tracker_params().usage()?;
    let format = args.format.unwrap_or(cfg.format);
    let dets = or_config(args.dets, &cfg.dets);
    let embs = or_config(args.embs, &cfg.embs);
    let outs = or_config(args.out, &cfg.out);
    let timings = or_config(args.timing, &cfg.timing);
    if dets.is_empty() {
        return Err(usage("no detection file given (--dets)"));
    }
    if outs.len() != dets.len() {
        return Err(usage(format!("{} --dets but {} --out", dets.len(), outs.len())));
    }
    if !(embs.is_empty() || embs.len() == dets.len()) {
        return Err(usage(format!("{} --dets but {} --embs", dets.len(), embs.len())));
    }
    if !(timings.is_empty() || timings.len() == dets.len()) {
        return Err(usage(format!("{} --dets but {} --timing", dets.len(), timings.len())));
    }
    if params.cost.uses_appearance() && embs.is_empty() {
        return Err(usage("beta > 0 needs an embedding sidecar (--embs); set beta=0 to track on position only"));
    }
    let seqs: Vec<Sequence> = dets
        .into_iter()
        .enumerate()
        .map(|(i, d)| Sequence {
            dets: d,
            embs: embs.get(i).cloned(),
            timing: timings.get(i).cloned().unwrap_or_else(|| default_timing_path(&outs[i])),
            out: outs[i].clone(),
        })
        .collect();

    let results = pool(args.jobs)?.install(|| {
        seqs.par_iter()
            .map(|s| track_one(s, &params, format, &cfg.kitti_type))
            .collect::<Vec<_>>()
    });
    let summaries = first_error(results)?;

    let rows: Vec<Vec<String>> = seqs
        .iter()
        .zip(&summaries)
        .map(|(s, (tracks, sum))| {
            vec![
                s.out.display().to_string(),
                sum.frames.to_string(),
                tracks.to_string(),
                format!("{:.3}", sum.total_ms / sum.frames.max(1) as f64),
                format!("{:.1}", sum.fps),
            ]
        })
        .collect();
    print!("{}", table::render(&["output", "frames", "tracks", "ms/frame", "FPS"], &rows));
    Ok(())
}

/// Classifies a library error and names the file it concerns.
fn at(path: &Path) -> impl Fn(proptrack::Error) -> Failure + '_ {
    move |e| Failure::from(e.in_file(path)).in_file(path)
}

fn load_detections(path: &Path, format: Format, kitti_type: &str) -> CmdResult<FrameMap<Detection>> {
    match format {
        Format::Mot => io::read_mot(path).and_then(|r| io::detections_from_mot(&r)),
        Format::Kitti => io::read_kitti(path, Some(kitti_type)).and_then(|r| io::detections_from_kitti(&r)),
    }
    .map_err(at(path))
}

fn track_one(s: &Sequence, params: &TrackerParams, format: Format, kitti_type: &str) -> CmdResult<(usize, TimingSummary)> {
    let mut stream = load_detections(&s.dets, format, kitti_type)?;
    if let Some(e) = &s.embs {
        let table = io::read_embeddings(e).map_err(at(e))?;
        io::attach_embeddings(&mut stream, &table).map_err(at(e))?;
    }
    let (results, timing) = run_sequence(&stream, params).map_err(at(&s.dets))?;

    let records = hypothesis_records(&results);
    match format {
        Format::Mot => io::write_mot(&s.out, &records)?,
        Format::Kitti => {
            let rows: Vec<KittiRecord> = records
                .iter()
                .map(|r| Ok(KittiRecord::from_bbox(r.frame, r.id, kitti_type, &r.bbox()?, Some(r.conf))))
                .collect::<proptrack::Result<_>>()?;
            io::write_kitti(&s.out, &rows)?;
        }
    }
    let ids: BTreeSet<i64> = records.iter().map(|r| r.id).collect();

    let report = TimingReport {
        frames: results
            .iter()
            .zip(&timing.frames)
            .map(|(r, t)| FrameTiming { frame: r.frame, ms: *t, total: t.total() })
            .collect(),
        summary: timing.summary(),
    };
    write_json(&s.timing, &report)?;
    Ok((ids.len(), report.summary))
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    gt: Vec<PathBuf>,
    hyp: Vec<PathBuf>,
    format: Option<Format>,
    iou_threshold: Option<f64>,
    json: Option<PathBuf>,
    jobs: usize,
}

#[derive(Serialize)]
struct SequenceReport {
    gt: PathBuf,
    hyp: PathBuf,
    #[serde(flatten)]
    columns: ReportColumns,
}

#[derive(Serialize)]
struct EvalReport {
    iou_threshold: f64,
    sequences: Vec<SequenceReport>,
    combined: ReportColumns,
}

fn load_tracks(path: &Path, format: Format, kitti_type: &str) -> CmdResult<FrameMap<TrackBox>> {
    match format {
        Format::Mot => io::read_mot(path).and_then(|r| io::tracks_from_mot(&r)),
        Format::Kitti => io::read_kitti(path, Some(kitti_type)).and_then(|r| io::tracks_from_kitti(&r)),
    }
    .map_err(at(path))
}

fn report_row(name: String, c: &ReportColumns) -> Vec<String> {
    vec![
        name,
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
    ]
}

fn eval(args: EvalArgs, config: &ConfigArgs) -> CmdResult {
    let cfg = load(config)?;
    let format = args.format.unwrap_or(cfg.format);
    let gts = if args.gt.is_empty() { cfg.gt.clone() } else { args.gt };
    let hyps = if args.hyp.is_empty() { cfg.hyp.clone() } else { args.hyp };
    let thr = args.iou_threshold.unwrap_or(cfg.iou_threshold);
    if gts.is_empty() {
        return Err(usage("no ground truth file given (--gt)"));
    }
    if gts.len() != hyps.len() {
        return Err(usage(format!("{} --gt but {} --hyp", gts.len(), hyps.len())));
    }
    if !(thr > 0.0 && thr <= 1.0) {
        return Err(usage(format!("iou threshold must be in (0, 1], got {thr}")));
    }

    let pairs: Vec<(&PathBuf, &PathBuf)> = gts.iter().zip(&hyps).collect();
    let results = pool(args.jobs)?.install(|| {
        pairs
            .par_iter()
            .map(|(g, h)| {
                let gt = load_tracks(g, format, &cfg.kitti_type)?;
                let hyp = load_tracks(h, format, &cfg.kitti_type)?;
                evaluate(&gt, &hyp, thr).map_err(at(h))
            })
            .collect::<Vec<_>>()
    });
    let reports = first_error(results)?;
    let combined = MotReport::combine(&reports)?;

    let header = ["sequence", "MOTA", "MOTP", "FP", "FN", "IDs", "MT", "ML", "IDF1", "P", "R", "GT"];
    let mut rows: Vec<Vec<String>> = pairs
        .iter()
        .zip(&reports)
        .map(|((_, h), r)| report_row(h.display().to_string(), &r.columns()))
        .collect();
    if reports.len() > 1 {
        rows.push(report_row("combined".into(), &combined.columns()));
    }
    print!("{}", table::render(&header, &rows));

    if let Some(path) = args.json.or(cfg.report) {
        let report = EvalReport {
            iou_threshold: thr,
            sequences: pairs
                .iter()
                .zip(&reports)
                .map(|((g, h), r)| SequenceReport { gt: (*g).clone(), hyp: (*h).clone(), columns: r.columns() })
                .collect(),
            combined: combined.columns(),
        };
        write_json(&path, &report)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

pub const SIM_FILES: [&str; 4] = ["gt.txt", "det.txt", "emb.jsonl", "labeled.jsonl"];

fn simulate(scenario: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> CmdResult {
    let mut params = match scenario {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(Failure::Usage)?;
            toml::from_str::<ScenarioParams>(&text)
                .with_context(|| format!("parsing {}", p.display()))
                .map_err(Failure::Usage)?
        }
        None => ScenarioParams::default(),
    };
    if let Some(s) = seed {
        params.seed = s;
    }
    let scene = proptrack::sim::generate(&params)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .map_err(Failure::Data)?;
    let [gt, det, emb, labeled] = SIM_FILES.map(|f| out_dir.join(f));
    io::write_mot(&gt, &scene.ground_truth_records())?;
    io::write_mot(&det, &scene.detection_records())?;
    io::write_embeddings(&emb, &io::embedding_table(&scene.detections))?;
    io::write_labeled_embeddings(&labeled, &scene.labeled_frames())?;

    let detections: usize = scene.detections.values().map(Vec::len).sum();
    let rows = vec![vec![
        params.seed.to_string(),
        params.frames.to_string(),
        params.objects.to_string(),
        detections.to_string(),
        params.occlusions.len().to_string(),
        scene.bounces.len().to_string(),
        out_dir.display().to_string(),
    ]];
    print!(
        "{}",
        table::render(&["seed", "frames", "objects", "detections", "occlusions", "bounces", "out_dir"], &rows)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// mine

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MineReport {
    pub items: usize,
    pub identities: usize,
    pub triplets: usize,
    pub loss: f64,
    pub margin: f64,
    /// Fraction of triplets with a positive hinge term.
    pub violation_fraction: f64,
}

fn mine(labeled: Option<PathBuf>, json: Option<PathBuf>, config: &ConfigArgs) -> CmdResult {
    let cfg = load(config)?;
    let path = labeled
        .or(cfg.labeled_embs.clone())
        .ok_or_else(|| usage("no labeled embedding file given (--labeled-embs)"))?;
    let frames = io::read_labeled_embeddings(&path).map_err(at(&path))?;
    let params = cfg.mining_params();
    let batch = sample_batch(&frames, &params, cfg.seed).map_err(at(&path))?;
    let triplets = mine_hard_triplets(&batch);
    let embeddings = batch.embeddings();
    let loss = triplet_loss(&triplets, &embeddings, params.margin)?;
    let violations = triplets
        .iter()
        .filter(|t| {
            let a = &embeddings[t.anchor];
            a.sq_distance(&embeddings[t.positive]) - a.sq_distance(&embeddings[t.negative]) + params.margin > 0.0
        })
        .count();
    let report = MineReport {
        items: batch.len(),
        identities: batch.identity_counts().len(),
        triplets: triplets.len(),
        loss,
        margin: params.margin,
        violation_fraction: violations as f64 / triplets.len() as f64,
    };
    let rows = vec![vec![
        report.items.to_string(),
        report.identities.to_string(),
        report.triplets.to_string(),
        format!("{:.6}", report.loss),
        report.margin.to_string(),
        format!("{:.4}", report.violation_fraction),
    ]];
    print!(
        "{}",
        table::render(&["items", "identities", "triplets", "loss", "margin", "violations"], &rows)
    );
    if let Some(p) = json {
        write_json(&p, &report)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bench

#[derive(Serialize)]
struct BenchRow {
    #[serde(flatten)]
    point: BenchPoint,
    dominant: &'static str,
}

fn bench(
    tracks: &[usize],
    dim: usize,
    frames: u64,
    repeats: usize,
    seed: u64,
    json: Option<PathBuf>,
    config: &ConfigArgs,
) -> CmdResult {
    let cfg = load(config)?;
    let params = cfg.tracker_params().usage()?;
    if frames < 2 {
        return Err(usage("--frames must be at least 2"));
    }
    let mut points = Vec::with_capacity(tracks.len());
    for &n in tracks {
        if n == 0 {
            return Err(usage("--tracks must be positive"));
        }
        let point = bench_point(&BenchConfig { tracks: n, dim, frames, repeats, seed }, &params)?;
        points.push(BenchRow { point, dominant: point.median_ms.dominant() });
    }
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|r| {
            let p = &r.point;
            vec![
                p.tracks.to_string(),
                p.dim.to_string(),
                format!("{:.4}", p.median_ms.predict),
                format!("{:.4}", p.median_ms.matrix),
                format!("{:.4}", p.median_ms.solve),
                format!("{:.4}", p.median_ms.update),
                format!("{:.4}", p.step_median_ms),
                format!("{:.4}", p.step_p95_ms),
                r.dominant.to_string(),
            ]
        })
        .collect();
    print!(
        "{}",
        table::render(
            &["N", "dim", "predict", "matrix", "solve", "update", "step", "step p95", "dominant"],
            &rows
        )
    );
    if let Some(p) = json {
        write_json(&p, &points)?;
    }
    Ok(())
}

use std::path::Path;
use std::process::{Command, Output};

use proptrack_cli::config::KEYS;

fn proptrack(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proptrack"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = proptrack(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str], code: i32) -> String {
    let out = proptrack(dir, args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn report(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn help_documents_every_config_key() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in [&["--help"][..], &["track", "--help"], &["eval", "--help"], &["mine", "--help"]] {
        let help = ok(dir.path(), cmd);
        for (key, _) in KEYS {
            let line = help
                .lines()
                .find(|l| l.split_whitespace().next() == Some(key))
                .unwrap_or_else(|| panic!("{cmd:?} help lacks {key}"));
            assert!(line.contains("[default: "), "{line}");
        }
    }
}

#[test]
fn simulate_track_eval_chain_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--out-dir", "."]);
    for f in ["gt.txt", "det.txt", "emb.jsonl", "labeled.jsonl"] {
        assert!(d.join(f).exists(), "{f}");
    }
    ok(d, &["track", "--dets", "det.txt", "--embs", "emb.jsonl", "--out", "hyp.txt"]);
    let timing = report(d, "hyp.txt.timing.json");
    let frame = &timing["frames"][0];
    for key in ["frame", "predict", "matrix", "solve", "update"] {
        assert!(frame.get(key).is_some(), "{key}");
    }
    assert!(timing["summary"]["fps"].as_f64().unwrap() > 0.0);

    let table = ok(d, &["eval", "--gt", "gt.txt", "--hyp", "hyp.txt", "--json", "r.json"]);
    assert!(table.lines().next().unwrap().contains("MOTA"));
    let r = report(d, "r.json");
    // Default scenes have perfect detections.
    assert_eq!(r["combined"]["MOTA"], 100.0);
    assert_eq!(r["combined"]["IDs"], 0);
}

#[test]
fn embeddings_required_only_with_appearance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--out-dir", ".", "--seed", "3"]);
    let err = fails(d, &["track", "--dets", "det.txt", "--out", "hyp.txt"], 1);
    assert!(err.contains("beta"), "{err}");
    ok(d, &["track", "--dets", "det.txt", "--out", "hyp.txt", "--set", "beta=0"]);
    ok(d, &["eval", "--gt", "gt.txt", "--hyp", "hyp.txt", "--json", "r.json"]);
    assert_eq!(report(d, "r.json")["combined"]["MOTA"], 100.0);
}

#[test]
fn eval_swap_fixture_and_column_names() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut gt = String::new();
    let mut hyp = String::new();
    for f in 1..=10 {
        gt.push_str(&format!("{f},1,0,0,10,10\n{f},2,100,0,10,10\n"));
        let (a, b) = if f < 6 { (1, 2) } else { (2, 1) };
        hyp.push_str(&format!("{f},{a},0,0,10,10\n{f},{b},100,0,10,10\n"));
    }
    std::fs::write(d.join("gt.txt"), gt).unwrap();
    std::fs::write(d.join("hyp.txt"), hyp).unwrap();
    ok(d, &["eval", "--gt", "gt.txt", "--hyp", "hyp.txt", "--json", "r.json"]);
    let r = report(d, "r.json");
    let c = &r["combined"];
    for key in ["MOTA", "MOTP", "FP", "FN", "IDs"] {
        assert!(c.get(key).is_some(), "{key} missing from {c}");
    }
    assert_eq!(c["IDs"], 2);
    assert_eq!((c["FP"].as_u64(), c["FN"].as_u64()), (Some(0), Some(0)));
    assert!((c["MOTA"].as_f64().unwrap() - 90.0).abs() < 1e-9);
    assert_eq!(c["MOTP"], 100.0);

    ok(d, &["eval", "--gt", "gt.txt", "--hyp", "gt.txt", "--json", "self.json"]);
    let s = report(d, "self.json");
    assert_eq!(s["combined"]["MOTA"], 100.0);
    assert_eq!(s["combined"]["IDF1"], 100.0);
}

#[test]
fn multiple_sequences_are_combined_and_jobs_do_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for seed in ["1", "2"] {
        std::fs::create_dir(d.join(seed)).unwrap();
        ok(d, &["simulate", "--out-dir", seed, "--seed", seed]);
    }
    let track = |jobs: &str, suffix: &str| {
        let (h1, h2) = (format!("1/hyp{suffix}.txt"), format!("2/hyp{suffix}.txt"));
        ok(
            d,
            &[
                "track", "--dets", "1/det.txt", "--embs", "1/emb.jsonl", "--out", &h1, "--dets", "2/det.txt",
                "--embs", "2/emb.jsonl", "--out", &h2, "--jobs", jobs,
            ],
        );
        (std::fs::read(d.join(h1)).unwrap(), std::fs::read(d.join(h2)).unwrap())
    };
    assert_eq!(track("1", "_serial"), track("2", "_parallel"));

    ok(
        d,
        &[
            "eval", "--gt", "1/gt.txt", "--hyp", "1/hyp_serial.txt", "--gt", "2/gt.txt", "--hyp",
            "2/hyp_serial.txt", "--jobs", "2", "--json", "r.json",
        ],
    );
    let r = report(d, "r.json");
    let seqs = r["sequences"].as_array().unwrap();
    assert_eq!(seqs.len(), 2);
    let gt: u64 = seqs.iter().map(|s| s["GT"].as_u64().unwrap()).sum();
    assert_eq!(r["combined"]["GT"].as_u64(), Some(gt));
}

#[test]
fn kitti_track_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut gt = String::new();
    for f in 0..20 {
        let x = 10.0 + 3.0 * f as f64;
        gt.push_str(&format!("{f} 1 Car 0 0 -1 {x} 50 {} 90 1.5 1.6 3.9 1 2 10 0\n", x + 40.0));
        gt.push_str(&format!("{f} 2 Car 0 0 -1 300 {} 340 {} 1.5 1.6 3.9 1 2 10 0\n", 40 + f, 80 + f));
        gt.push_str(&format!("{f} 3 Pedestrian 0 0 -1 500 10 520 60 1.7 0.6 0.8 1 2 10 0\n"));
        gt.push_str(&format!("{f} -1 DontCare -1 -1 -10 0 0 5 5 -1 -1 -1 -1000 -1000 -1000 -10\n"));
    }
    std::fs::write(d.join("gt.txt"), &gt).unwrap();
    ok(d, &["track", "--format", "kitti", "--dets", "gt.txt", "--out", "hyp.txt", "--set", "beta=0"]);
    let hyp = std::fs::read_to_string(d.join("hyp.txt")).unwrap();
    assert_eq!(hyp.lines().count(), 40);
    assert!(hyp.lines().all(|l| l.split(' ').nth(2) == Some("Car")));
    assert!(hyp.starts_with("0 "));
    ok(d, &["eval", "--format", "kitti", "--gt", "gt.txt", "--hyp", "hyp.txt", "--json", "r.json"]);
    let r = report(d, "r.json");
    assert_eq!(r["combined"]["GT"], 40);
    assert_eq!(r["combined"]["MOTA"], 100.0);

    let cfg = d.join("ped.toml");
    std::fs::write(&cfg, "format = \"kitti\"\nkitti_type = \"Pedestrian\"\n").unwrap();
    ok(d, &["eval", "--config", "ped.toml", "--gt", "gt.txt", "--hyp", "gt.txt", "--json", "p.json"]);
    assert_eq!(report(d, "p.json")["combined"]["GT"], 20);
}

#[test]
fn mine_on_noiseless_stream_has_zero_loss() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("s.toml"), "embedding_noise = 0.0\nobjects = 10\nframes = 40\nseed = 9\n").unwrap();
    ok(d, &["simulate", "--scenario-config", "s.toml", "--out-dir", "."]);
    let table = ok(d, &["mine", "--labeled-embs", "labeled.jsonl", "--json", "m.json"]);
    assert!(table.contains("violations"));
    let m = report(d, "m.json");
    assert_eq!(m["loss"], 0.0);
    assert_eq!(m["violation_fraction"], 0.0);
    assert!(m["triplets"].as_u64().unwrap() > 0);

    // A margin beyond the largest possible negative distance is violated everywhere.
    ok(d, &["mine", "--labeled-embs", "labeled.jsonl", "--set", "margin=4.5", "--json", "m.json"]);
    assert_eq!(report(d, "m.json")["violation_fraction"], 1.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fails(d, &[], 1);
    fails(d, &["track", "--bogus"], 1);
    fails(d, &["eval", "--gt", "a.txt"], 1);
    fails(d, &["eval", "--gt", "a.txt", "--hyp", "a.txt", "--set", "colour=red"], 1);
    fails(d, &["eval", "--gt", "a.txt", "--hyp", "a.txt", "--set", "max_cost=-1"], 1);
    fails(d, &["eval", "--gt", "a.txt", "--hyp", "a.txt", "--iou-threshold", "1.5"], 1);
    std::fs::write(d.join("bad.toml"), "alpah = 0.3\n").unwrap();
    let err = fails(d, &["track", "--config", "bad.toml", "--dets", "x", "--out", "y"], 1);
    assert!(err.contains("alpah"), "{err}");
    std::fs::write(d.join("scene.toml"), "objects = 3\n").unwrap();
    let err = fails(d, &["simulate", "--scenario-config", "scene.toml", "--out-dir", "s"], 1);
    assert!(err.contains("seed"), "{err}");

    // Data errors.
    let err = fails(d, &["eval", "--gt", "missing.txt", "--hyp", "missing.txt"], 2);
    assert!(err.contains("missing.txt"), "{err}");
    std::fs::write(d.join("gt.txt"), "1,1,0,0,10,10\n2,1,0,0,10\n").unwrap();
    let err = fails(d, &["eval", "--gt", "gt.txt", "--hyp", "gt.txt"], 2);
    assert!(err.contains("gt.txt") && err.contains("line 2"), "{err}");
    std::fs::write(d.join("det.txt"), "1,-1,0,0,10,10,0.9\n1,-1,50,0,10,10,0.8\n").unwrap();
    std::fs::write(d.join("emb.jsonl"), "{\"frame\":1,\"index\":0,\"embedding\":[1,0]}\n{\"frame\":1,\"index\":1,\"embedding\":[1]}\n").unwrap();
    let err = fails(d, &["track", "--dets", "det.txt", "--embs", "emb.jsonl", "--out", "h.txt"], 2);
    assert!(err.contains("emb.jsonl") && err.contains("line 2"), "{err}");
    std::fs::write(d.join("emb.jsonl"), "{\"frame\":1,\"index\":0,\"embedding\":[1,0]}\n").unwrap();
    let err = fails(d, &["track", "--dets", "det.txt", "--embs", "emb.jsonl", "--out", "h.txt"], 2);
    assert!(err.contains("frame 1"), "{err}");
}

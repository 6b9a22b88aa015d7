mod common;

use std::path::Path;
use std::process::{Command, Output};

use ts3d::config::RunConfig;
use ts3d::train::StepRecord;

fn ts3d(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ts3d"));
    c.args(args);
    if let Some(t) = threads {
        c.env("TS3D_THREADS", t);
    }
    c.output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ts3d(args, Some("1"));
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("tiny.cfg");
    let mut text = common::tiny().render();
    text.push_str("# short run\ntrain.steps=4\ntrain.checkpoint_every=2\n");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn usage_errors_exit_with_1() {
    assert_eq!(ts3d(&[], None).status.code(), Some(1));
    assert_eq!(ts3d(&["bogus"], None).status.code(), Some(1));
    assert_eq!(ts3d(&["eval", "--pred"], None).status.code(), Some(1));
    assert_eq!(ts3d(&["--help"], None).status.code(), Some(0));
}

#[test]
fn validation_failures_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = ts3d(&["synth", "--set", "model.c_disp=64", "--out", s(dir.path())], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("C_disp"));
    let out = ts3d(&["synth", "--set", "model.nonsense=1", "--out", s(dir.path())], None);
    assert_eq!(out.status.code(), Some(2));
    let out = ts3d(&["eval", "--pred", "/nonexistent", "--gt", "/nonexistent"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = ts3d(&["gradcheck", "--scope", "ops", "--filter", "add"], Some("zero"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_ops_passes() {
    let out = ok(&["gradcheck", "--scope", "ops"]);
    let lines: Vec<_> = out.lines().filter(|l| l.starts_with("scope=ops")).collect();
    assert!(lines.len() >= 20);
    assert!(lines.iter().all(|l| l.ends_with("status=pass")), "{out}");
    assert!(out.contains("failed=0"));
}

#[test]
fn eval_of_labels_against_themselves_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&["synth", "--config", s(&write_tiny_config(dir.path())), "--out", s(&ds)]);
    let labels = ds.join("label_2");
    let out = ok(&["eval", "--pred", s(&labels), "--gt", s(&labels)]);
    let metrics: Vec<(&str, f64)> =
        out.lines().map(|l| l.split_once('=').unwrap()).map(|(k, v)| (k, v.parse().unwrap())).collect();
    let aps: Vec<_> = metrics.iter().filter(|(k, _)| k.contains("_ap@")).collect();
    assert_eq!(aps.len(), 6);
    let gt: f64 = metrics.iter().filter(|(k, _)| k.ends_with(".gt")).map(|(_, v)| v).sum();
    assert!(gt > 0.0);
    for (k, v) in aps {
        let class = k.split('.').next().unwrap();
        let has_gt = metrics.iter().any(|(m, n)| *m == format!("{class}.gt") && *n > 0.0);
        assert_eq!(*v, if has_gt { 100.0 } else { 0.0 }, "{k}");
    }
}

#[test]
fn synth_output_does_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(ts3d(&["synth", "--config", s(&cfg), "--out", s(&a)], Some("1")).status.success());
    assert!(ts3d(&["synth", "--config", s(&cfg), "--out", s(&b)], Some("3")).status.success());
    for sub in ["manifest.txt", "config.txt", "image_2/000003.ppm", "label_2/000005.txt", "calib/000000.txt"] {
        assert_eq!(std::fs::read(a.join(sub)).unwrap(), std::fs::read(b.join(sub)).unwrap(), "{sub}");
    }
    let resolved = RunConfig::load(&a.join("config.txt")).unwrap();
    let mut expect = common::tiny();
    expect.train.steps = 4;
    expect.train.checkpoint_every = 2;
    assert_eq!(resolved, expect);
}

#[test]
fn train_resume_infer_eval_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let ds = dir.path().join("ds");
    ok(&["synth", "--config", s(&cfg), "--out", s(&ds)]);
    ok(&["pseudogt", "--config", s(&cfg), "--dataset", s(&ds)]);
    assert!(ds.join("disp_pgt/000000.pfm").exists() && ds.join("disp_pgt/000000_mask.pgm").exists());

    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--dataset", s(&ds), "--out", s(&run)]);
    for f in ["config.txt", "metrics.log", "checkpoint-000002.ts3d", "checkpoint-000004.ts3d", "last.ts3d"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("metrics.log")).unwrap();
    let records: Vec<StepRecord> = log.lines().map(|l| StepRecord::parse(l).expect(l)).collect();
    assert_eq!(records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);

    // Resume from step 2 with the checkpoint's own configuration.
    let again = dir.path().join("again");
    ok(&["train", "--dataset", s(&ds), "--out", s(&again), "--resume", s(&run.join("checkpoint-000002.ts3d"))]);
    let log2 = std::fs::read_to_string(again.join("metrics.log")).unwrap();
    let tail: Vec<StepRecord> = log2.lines().map(|l| StepRecord::parse(l).unwrap()).collect();
    assert_eq!(tail, records[2..]);

    let out = ts3d(
        &["train", "--dataset", s(&ds), "--out", s(&again), "--set", "model.n_dec=3", "--resume", s(&run.join("last.ts3d"))],
        Some("1"),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.n_dec"));

    let pred = dir.path().join("pred");
    ok(&["infer", "--checkpoint", s(&run.join("last.ts3d")), "--dataset", s(&ds), "--out", s(&pred), "--set", "infer.min_score=0.05"]);
    assert!(pred.join("000004.txt").exists() && pred.join("000005.txt").exists() && !pred.join("000000.txt").exists());
    assert_eq!(RunConfig::load(&pred.join("config.txt")).unwrap().infer.min_score, 0.05);
    for f in std::fs::read_dir(&pred).unwrap() {
        let p = f.unwrap().path();
        if p.extension().is_some_and(|e| e == "txt") && !p.ends_with("config.txt") {
            for l in ts3d::kitti::read_labels(&p).unwrap() {
                assert!(l.score.is_some_and(|sc| sc >= 0.05));
            }
        }
    }
    let out = ts3d(&["infer", "--checkpoint", s(&run.join("last.ts3d")), "--dataset", s(&ds), "--out", s(&pred), "--set", "model.n_dec=1"], None);
    assert_eq!(out.status.code(), Some(2));
    let metrics = ok(&["eval", "--pred", s(&pred), "--gt", s(&ds.join("label_2"))]);
    assert!(metrics.contains("car.bev_ap@0.50="), "{metrics}");

    let hm = dir.path().join("hm");
    ok(&["heatmap", "--checkpoint", s(&run.join("last.ts3d")), "--dataset", s(&ds), "--frame", "000001", "--probe", "20,10", "--out", s(&hm)]);
    let (w, h, v) = ts3d::image::read_pgm(&hm.join("heatmap.pgm")).unwrap();
    assert_eq!((w, h), (64, 32));
    // The probe's own cell is the most similar one.
    assert_eq!(v[10 * 64 + 20], 1.0);
    assert!(ts3d::image::read_ppm(&hm.join("masked.ppm")).is_ok());
    let out = ts3d(&["heatmap", "--checkpoint", s(&run.join("last.ts3d")), "--dataset", s(&ds), "--frame", "000001", "--probe", "999,10", "--out", s(&hm)], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_map_to_exit_code_3() {
    assert_eq!(ts3d::Error::GradCheck("x".into()).exit_code(), 3);
    assert_eq!(ts3d::Error::Core(ts3d_core::Error::NonFinite { op: "mul" }).exit_code(), 3);
    assert_eq!(ts3d::Error::Config("x".into()).exit_code(), 2);
    assert_eq!(ts3d::Error::Mismatch(vec!["a".into()]).exit_code(), 2);
}

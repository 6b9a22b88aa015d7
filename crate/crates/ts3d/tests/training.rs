mod common;

use ts3d::checkpoint::Checkpoint;
use ts3d::config::RunConfig;
use ts3d::dataset::Dataset;
use ts3d::train::{plan_step, StepRecord, Trainer};
use ts3d::Error;

fn setup(cfg: &RunConfig) -> Dataset {
    Dataset::generate(cfg).unwrap()
}

fn new_trainer(cfg: &RunConfig, data: &Dataset) -> Trainer {
    Trainer::new(cfg, data.manifest.priors.clone(), &data.frames[..cfg.synth.train_frames], None).unwrap()
}

#[test]
fn identical_runs_have_bit_identical_trajectories() {
    let mut cfg = common::tiny();
    cfg.train.steps = 100;
    let data = setup(&cfg);
    let run = || {
        let mut t = new_trainer(&cfg, &data);
        (0..100).map(|_| t.step().unwrap()).collect::<Vec<_>>()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.len(), 100);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.total.to_bits(), y.total.to_bits(), "step {}", x.step);
        assert_eq!(x, y);
    }
    assert!(a.iter().all(|r| r.total.is_finite()));
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let mut cfg = common::tiny();
    cfg.train.steps = 20;
    cfg.train.batch_size = 2;
    let data = setup(&cfg);
    let frames = &data.frames[..cfg.synth.train_frames];
    let mut full = new_trainer(&cfg, &data);
    let straight: Vec<StepRecord> = (0..20).map(|_| full.step().unwrap()).collect();

    let mut first = new_trainer(&cfg, &data);
    let mut resumed: Vec<StepRecord> = (0..10).map(|_| first.step().unwrap()).collect();
    let bytes = first.checkpoint().encode().unwrap();
    drop(first);
    let ckpt = Checkpoint::decode(&bytes).unwrap();
    let mut second = Trainer::resume(&ckpt, &cfg, frames, None).unwrap();
    assert_eq!(second.step_count(), 10);
    while !second.finished() {
        resumed.push(second.step().unwrap());
    }
    assert_eq!(resumed.len(), straight.len());
    for (a, b) in straight.iter().zip(&resumed) {
        assert_eq!(a.step, b.step);
        for (x, y) in [(a.total, b.total), (a.cls, b.cls), (a.reg, b.reg), (a.orient, b.orient), (a.disp, b.disp), (a.lr, b.lr)] {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "step {}: {x} vs {y}", a.step);
        }
    }
    for ((_, p), (_, q)) in full.store.iter().zip(second.store.iter()) {
        assert_eq!(p.value, q.value, "{}", p.name);
    }
}

#[test]
fn resume_rejects_a_changed_trajectory() {
    let cfg = common::tiny();
    let data = setup(&cfg);
    let ckpt = new_trainer(&cfg, &data).checkpoint();
    let mut other = cfg.clone();
    other.train.seed = 9;
    other.model.pe = ts3d_core::config::PeMode::Sine2d;
    match Trainer::resume(&ckpt, &other, &data.frames[..4], None) {
        Err(Error::Mismatch(keys)) => assert_eq!(keys, vec!["model.pe", "train.seed"]),
        Err(e) => panic!("{e}"),
        Ok(_) => panic!("resume accepted a different configuration"),
    }
}

#[test]
fn step_plans_depend_only_on_seed_and_step() {
    let mut cfg = common::tiny();
    cfg.train.batch_size = 3;
    let a: Vec<_> = (0..12).map(|s| plan_step(&cfg, 8, s)).collect();
    let b: Vec<_> = (0..12).rev().map(|s| plan_step(&cfg, 8, s)).collect::<Vec<_>>().into_iter().rev().collect();
    assert_eq!(a, b);
    // Each epoch visits every sample once.
    let seen: Vec<usize> = a.iter().flatten().map(|p| p.index).collect();
    for epoch in seen[..24].chunks(8) {
        let mut e = epoch.to_vec();
        e.sort();
        assert_eq!(e, (0..8).collect::<Vec<_>>());
    }
    assert!(a.iter().flatten().any(|p| p.flip) && a.iter().flatten().any(|p| !p.flip));
    assert!(a.iter().flatten().all(|p| p.jitter.is_some()));
    cfg.train.seed += 1;
    assert_ne!(plan_step(&cfg, 8, 0), a[0]);
    cfg.train.flip_prob = 0.0;
    cfg.train.jitter = false;
    assert!(plan_step(&cfg, 8, 5).iter().all(|p| !p.flip && p.jitter.is_none()));
}

#[test]
fn step_records_round_trip_through_text() {
    let r = StepRecord { step: 7, lr: 1.25e-4, cls: 3.5, reg: 0.125, orient: 0.0625, disp: 2.0, total: 5.6875 };
    let line = r.to_string();
    assert!(line.starts_with("step=7 lr="), "{line}");
    for key in ["cls=", "reg=", "orient=", "disp=", "total="] {
        assert!(line.contains(key), "{line}");
    }
    assert_eq!(StepRecord::parse(&line), Some(r));
    assert_eq!(StepRecord::parse("step=1 lr=oops"), None);
}

#[test]
fn training_without_disparity_supervision_or_augmentation_runs() {
    let mut cfg = common::tiny();
    cfg.train.disparity_supervision = false;
    cfg.train.flip_prob = 0.0;
    cfg.train.jitter = false;
    cfg.model.pe = ts3d_core::config::PeMode::None;
    let data = setup(&cfg);
    let mut t = new_trainer(&cfg, &data);
    assert!(t.samples.iter().all(|s| s.flipped.is_none() && s.original.targets.disparity.is_none()));
    let r = t.step().unwrap();
    assert_eq!(r.disp, 0.0);
    assert!(r.total.is_finite());
}

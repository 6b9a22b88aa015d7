mod common;

use std::collections::BTreeMap;
use std::path::Path;

use ts3d::dataset::{build_pseudo_gt, frame_seed, load_pseudo_gt, pseudo_gt, Dataset, Manifest, Split};
use ts3d_core::synth::synth_scene;

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn saved_dataset_loads_back_exactly() {
    let cfg = common::tiny();
    let data = Dataset::generate(&cfg).unwrap();
    assert_eq!(data.indices(Some(Split::Train)), vec![0, 1, 2, 3]);
    assert_eq!(data.indices(Some(Split::Val)), vec![4, 5]);
    let dir = tempfile::tempdir().unwrap();
    data.save(dir.path()).unwrap();
    for sub in ["image_2", "image_3", "label_2", "calib"] {
        assert_eq!(std::fs::read_dir(dir.path().join(sub)).unwrap().count(), 6, "{sub}");
    }
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back.manifest, data.manifest);
    assert_eq!(back.frames, data.frames);
}

#[test]
fn regeneration_is_byte_identical() {
    let cfg = common::tiny();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    Dataset::generate(&cfg).unwrap().save(a.path()).unwrap();
    Dataset::generate(&cfg).unwrap().save(b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 1 + 4 * 6);
    assert!(fa == fb, "regenerated files differ");
    let mut other = cfg.clone();
    other.synth.seed = 1;
    let c = tempfile::tempdir().unwrap();
    Dataset::generate(&other).unwrap().save(c.path()).unwrap();
    assert_ne!(files(c.path()), fa);
}

#[test]
fn frames_come_from_their_recorded_seeds() {
    let cfg = common::tiny();
    let data = Dataset::generate(&cfg).unwrap();
    for (i, (e, f)) in data.manifest.frames.iter().zip(&data.frames).enumerate() {
        assert_eq!(e.seed, frame_seed(cfg.synth.seed, i as u64));
        assert_eq!(synth_scene(e.seed, &cfg.scene()).labels, f.labels);
    }
}

#[test]
fn manifest_records_priors_from_training_labels() {
    let cfg = common::tiny();
    let data = Dataset::generate(&cfg).unwrap();
    let m = &data.manifest;
    assert_eq!(m.priors.shape_z.len(), cfg.model.anchors_per_cell());
    let train: Vec<_> = data.indices(Some(Split::Train)).iter().flat_map(|&i| data.frames[i].labels.clone()).collect();
    let cars: Vec<_> = train.iter().filter(|l| l.kind == "Car").collect();
    if !cars.is_empty() {
        let mean_h = cars.iter().map(|l| l.dimensions[0]).sum::<f64>() / cars.len() as f64;
        assert!((m.priors.class_size[0][0] - mean_h).abs() < 1e-12);
    }
    let text = m.render();
    assert_eq!(Manifest::parse(&text, Path::new("manifest.txt")).unwrap(), *m);
    assert_eq!(data.priors_for(&cfg), m.priors);
    let mut wider = cfg.clone();
    wider.model.anchor_ratios = vec![0.5, 1.5];
    assert_eq!(data.priors_for(&wider).shape_z.len(), 2);
}

#[test]
fn pseudo_gt_cache_round_trips() {
    let cfg = common::tiny();
    let data = Dataset::generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.save(dir.path()).unwrap();
    assert!(load_pseudo_gt(dir.path(), "000000").unwrap().is_none());
    build_pseudo_gt(dir.path(), &data, &cfg).unwrap();
    for (e, f) in data.manifest.frames.iter().zip(&data.frames) {
        let cached = load_pseudo_gt(dir.path(), &e.id).unwrap().unwrap();
        assert_eq!(cached, pseudo_gt(f, &cfg).unwrap());
    }
}

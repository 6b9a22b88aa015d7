mod common;

use std::path::Path;

use proptest::prelude::*;
use ts3d::config::{is_model_key, RunConfig, KEYS};
use ts3d::Error;
use ts3d_core::config::{PeMode, PyramidVariant};

fn parse(text: &str) -> ts3d::Result<RunConfig> {
    RunConfig::parse(text, Path::new("run.cfg"))
}

#[test]
fn comments_blanks_and_overrides() {
    let mut c = parse("# a comment\n\nmodel.pe = onehot  # trailing\ntrain.steps=10\nmodel.bins=4,8,16\n").unwrap();
    assert_eq!(c.model.pe, PeMode::OneHot);
    assert_eq!(c.train.steps, 10);
    assert_eq!(c.model.bins, [4, 8, 16]);
    c.apply(["train.steps=12", "model.pyramid=topdown_fpn"]).unwrap();
    assert_eq!(c.train.steps, 12);
    assert_eq!(c.model.pyramid, PyramidVariant::TopdownFpn);
}

#[test]
fn unknown_keys_and_bad_values_name_the_line() {
    match parse("train.steps=1\nmodel.colour=blue\n") {
        Err(Error::Parse { line: 2, msg, .. }) => assert!(msg.contains("model.colour"), "{msg}"),
        other => panic!("{other:?}"),
    }
    match parse("model.pe=fancy\n") {
        Err(Error::Parse { line: 1, msg, .. }) => assert!(msg.contains("model.pe"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert!(parse("train.steps\n").is_err());
    assert!(parse("train.seed=1\npreset=full\n").is_err());
}

#[test]
fn invalid_combinations_name_the_constraint() {
    let mut c = RunConfig::desk();
    c.model.c_disp = c.model.c_dec;
    let msg = c.validate().unwrap_err().to_string();
    assert!(msg.contains("C_disp") && msg.contains("C_dec"), "{msg}");
    let mut c = RunConfig::desk();
    c.model.width = 250;
    let msg = c.validate().unwrap_err().to_string();
    assert!(msg.contains("multiples of 16"), "{msg}");
    let mut c = RunConfig::desk();
    c.train.flip_prob = 1.5;
    assert!(c.validate().unwrap_err().to_string().contains("flip_prob"));
    RunConfig::desk().validate().unwrap();
    RunConfig::full().validate().unwrap();
    common::tiny().validate().unwrap();
}

#[test]
fn full_preset_carries_the_published_recipe() {
    let c = parse("preset=full\n").unwrap();
    assert_eq!((c.model.width, c.model.height), (1280, 288));
    assert_eq!(c.model.num_queries(), 1440);
    assert_eq!(c.train.lr, 2e-4);
    assert_eq!(c.train.weight_decay, 1e-4);
    assert_eq!(c.train.batch_size, 32);
    assert_eq!(c.optimizer().base_lr, 2e-4);
}

#[test]
fn rendered_config_parses_back() {
    for c in [RunConfig::desk(), RunConfig::full(), common::tiny()] {
        let text = c.render();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), KEYS.len());
        assert_eq!(parse(&text).unwrap(), c);
    }
}

#[test]
fn diff_lists_exactly_the_changed_keys() {
    let a = RunConfig::desk();
    let mut b = a.clone();
    b.model.c_dec = 128;
    b.train.lr = 0.5;
    assert_eq!(a.diff(&b, |_| true), vec!["model.c_dec", "train.lr"]);
    assert_eq!(a.diff(&b, is_model_key), vec!["model.c_dec"]);
}

proptest! {
    #[test]
    fn numeric_encoding_round_trips(seed in any::<u64>(), lr in 1e-8..1.0f64, steps in 1u64..1_000_000,
                                    pe in 0usize..4, pyr in 0usize..3, flip in 0.0..1.0f64, jitter in any::<bool>()) {
        let mut c = RunConfig::desk();
        c.train.seed = seed;
        c.synth.seed = seed.rotate_left(7);
        c.train.lr = lr;
        c.train.steps = steps;
        c.train.flip_prob = flip;
        c.train.jitter = jitter;
        c.model.pe = [PeMode::Dape, PeMode::Sine2d, PeMode::OneHot, PeMode::None][pe];
        c.model.pyramid = [PyramidVariant::Spfpn, PyramidVariant::TopdownFpn, PyramidVariant::BifpnLike][pyr];
        let enc: Vec<(&str, Vec<f64>)> = KEYS.iter().map(|k| (*k, c.get_encoded(k).unwrap())).collect();
        let back = RunConfig::from_encoded(enc.iter().map(|(k, v)| (*k, v.as_slice()))).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(parse(&c.render()).unwrap(), c);
    }
}

mod common;

use ts3d::checkpoint::{decode_entries, encode_entries, Checkpoint, Entry};
use ts3d::config::{is_model_key, is_resume_key};
use ts3d::dataset::Dataset;
use ts3d::train::Trainer;
use ts3d::Error;

#[test]
fn container_bytes_follow_the_documented_layout() {
    let entries = vec![Entry::f32("w", &[2], vec![1.0, -2.0]), Entry::f64("s", &[], vec![0.5])];
    let bytes = encode_entries(&entries).unwrap();
    let mut expect = b"TS3D".to_vec();
    expect.extend(1u32.to_le_bytes());
    expect.extend(2u32.to_le_bytes());
    expect.extend(1u32.to_le_bytes());
    expect.push(b'w');
    expect.extend([0u8, 1]); // f32 tag, rank 1
    expect.extend(2u32.to_le_bytes());
    expect.extend(1.0f32.to_le_bytes());
    expect.extend((-2.0f32).to_le_bytes());
    expect.extend(1u32.to_le_bytes());
    expect.push(b's');
    expect.extend([1u8, 0]); // f64 tag, rank 0
    expect.extend(0.5f64.to_le_bytes());
    assert_eq!(bytes, expect);
    assert_eq!(decode_entries(&bytes).unwrap(), entries);
}

#[test]
fn corrupt_containers_are_rejected() {
    let bytes = encode_entries(&[Entry::f32("w", &[3], vec![1.0, 2.0, 3.0])]).unwrap();
    assert!(decode_entries(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_entries(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode_entries(&magic).unwrap_err().to_string().contains("magic"));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(decode_entries(&version).unwrap_err().to_string().contains("version"));
    assert!(encode_entries(&[Entry::f32("w", &[2], vec![1.0])]).is_err());
}

fn trained(steps: u64) -> Trainer {
    let mut cfg = common::tiny();
    cfg.train.steps = 10;
    let data = Dataset::generate(&cfg).unwrap();
    let mut t = Trainer::new(&cfg, data.manifest.priors.clone(), &data.frames[..4], None).unwrap();
    for _ in 0..steps {
        t.step().unwrap();
    }
    t
}

#[test]
fn checkpoint_round_trip_preserves_everything() {
    let t = trained(3);
    let ckpt = t.checkpoint();
    let back = Checkpoint::decode(&ckpt.encode().unwrap()).unwrap();
    assert_eq!(back.config, t.cfg);
    assert_eq!(back.step, 3);
    assert_eq!(back.priors, t.model.priors);
    assert_eq!(back.params.len(), t.store.len());
    for (_, p) in t.store.iter() {
        let q = back.params.get(back.params.id_of(&p.name).unwrap());
        assert_eq!(q.value, p.value, "{}", p.name);
    }
    let opt = back.optimizer.unwrap();
    assert_eq!(opt.step, 3);
    assert_eq!(opt.first, t.opt.first);
    assert_eq!(opt.second, t.opt.second);
    assert_eq!(opt.config, t.opt.config);
    // Byte-stable: re-encoding the decoded checkpoint changes nothing.
    let again = Checkpoint::decode(&ckpt.encode().unwrap()).unwrap();
    assert_eq!(again.encode().unwrap(), ckpt.encode().unwrap());
}

#[test]
fn config_mismatch_lists_the_differing_keys() {
    let ckpt = trained(0).checkpoint();
    let mut other = ckpt.config.clone();
    other.model.n_dec = 3;
    other.loss.tau_fg = 0.6;
    other.train.checkpoint_every = 1;
    other.infer.min_score = 0.3;
    match ckpt.check_config(&other, is_resume_key) {
        Err(Error::Mismatch(keys)) => assert_eq!(keys, vec!["model.n_dec", "loss.tau_fg"]),
        r => panic!("{r:?}"),
    }
    match ckpt.check_config(&other, is_model_key) {
        Err(e @ Error::Mismatch(_)) => assert!(e.to_string().contains("model.n_dec"), "{e}"),
        r => panic!("{r:?}"),
    }
    let mut same = ckpt.config.clone();
    same.train.checkpoint_every = 7;
    ckpt.check_config(&same, is_resume_key).unwrap();
}

#[test]
fn restoring_into_a_different_architecture_fails() {
    let ckpt = trained(0).checkpoint();
    let mut cfg = ckpt.config.clone();
    cfg.model.n_dec = 3;
    let mut store = ts3d_core::ParamStore::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    ts3d_core::model::Ts3d::new(&cfg.model, &mut store, &mut rng).unwrap();
    match ckpt.restore_params(&mut store) {
        Err(Error::Mismatch(keys)) => assert!(keys.iter().any(|k| k.contains("unexpected") || k.contains("missing")), "{keys:?}"),
        r => panic!("{r:?}"),
    }
}

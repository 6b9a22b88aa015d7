use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ts3d_core::config::{ModelConfig, PyramidVariant};
use ts3d_core::spfpn::{correlation_cost_volume, Spfpn};
use ts3d_core::tensor::ParamBuilder;
use ts3d_core::{Graph, ParamStore, Tensor};

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Right view `R(x) = L(x + d0)`; columns whose source falls off the image
/// get fresh noise.
fn shifted(left: &Tensor<f64>, d0: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let s = left.shape();
    let (w, c) = (s[1], s[2]);
    let src = left.data();
    Tensor::from_fn(s, |i| {
        let (px, ch) = (i / c, i % c);
        let (y, x) = (px / w, px % w);
        if x + d0 < w {
            src[(y * w + x + d0) * c + ch]
        } else {
            rng.gen_range(-1.0..1.0)
        }
    })
}

#[test]
fn cost_volume_recovers_uniform_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..20 {
        let (h, w, c, bins) = (6, 40, rng.gen_range(16..=64), 12);
        let d0 = rng.gen_range(0..bins);
        let left = uniform(&[h, w, c], &mut rng);
        let right = shifted(&left, d0, &mut rng);
        let mut g = Graph::new();
        let (l, r) = (g.leaf(left), g.leaf(right));
        let cost = correlation_cost_volume(&mut g, l, r, bins).unwrap();
        let v = g.value(cost).data();
        // Interior: every bin reads a real column and the match is in frame.
        let (mut hit, mut total) = (0, 0);
        for y in 0..h {
            for x in bins - 1..w - d0 {
                let row = &v[(y * w + x) * bins..(y * w + x + 1) * bins];
                let best = (0..bins).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                hit += usize::from(best == d0);
                total += 1;
            }
        }
        let rate = hit as f64 / total as f64;
        assert!(rate >= 0.95, "case {case}: d0={d0} c={c} recovered at {rate:.3}");
    }
}

#[test]
fn cost_volume_zeroes_bins_beyond_the_left_edge() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let l = g.leaf(uniform(&[2, 5, 3], &mut rng));
    let r = g.leaf(uniform(&[2, 5, 3], &mut rng));
    let cost = correlation_cost_volume(&mut g, l, r, 8).unwrap();
    assert_eq!(g.shape(cost), [2, 5, 8]);
    let v = g.value(cost).data();
    for y in 0..2 {
        for x in 0..5 {
            for d in x + 1..8 {
                assert_eq!(v[(y * 5 + x) * 8 + d], 0.0);
            }
        }
    }
}

fn pyramid(variant: PyramidVariant) -> (Spfpn, ParamStore<f64>, ModelConfig) {
    let cfg = ModelConfig { pyramid: variant, ..ModelConfig::desk() };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spfpn = Spfpn::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg).unwrap();
    (spfpn, store, cfg)
}

fn init_volumes(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let (w, h) = (cfg.width / 4, cfg.height / 4);
    (0..3).map(|l| uniform(&[h >> l, w >> l, cfg.bins[l]], rng)).collect()
}

fn aggregate(spfpn: &Spfpn, store: &ParamStore<f64>, init: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let mut g = Graph::with_params(store);
    let vars: Vec<_> = init.iter().map(|t| g.leaf(t.clone())).collect();
    let out = spfpn.cross_scale_aggregate(&mut g, &vars).unwrap();
    out.iter().map(|&v| g.value(v).clone()).collect()
}

/// Channels of `a` and `b` at `level` that differ anywhere.
fn changed_channels(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<usize> {
    let c = *a.shape().last().unwrap();
    let mut out: Vec<usize> = (0..c)
        .filter(|&ch| a.data().iter().zip(b.data()).skip(ch).step_by(c).any(|(x, y)| x.to_bits() != y.to_bits()))
        .collect();
    out.dedup();
    out
}

#[test]
fn perturbing_a_bin_touches_only_its_native_channel() {
    let (spfpn, store, cfg) = pyramid(PyramidVariant::Spfpn);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let init = init_volumes(&cfg, &mut rng);
    let base = aggregate(&spfpn, &store, &init);
    let channels = cfg.stereo_channels();
    for l in 0..3 {
        assert_eq!(base[l].shape()[2], channels[l]);
        for d in [0, cfg.bins[l] / 2, cfg.bins[l] - 1] {
            let mut pert = init.clone();
            let c = cfg.bins[l];
            for (i, v) in pert[l].data_mut().iter_mut().enumerate() {
                if i % c == d {
                    *v += 0.25 + rng.gen_range(0.0..1.0);
                }
            }
            let out = aggregate(&spfpn, &store, &pert);
            assert_eq!(changed_channels(&base[l], &out[l]), vec![d], "level {l} bin {d}");
            // The native channel is the volume itself.
            let got: Vec<f64> = out[l].data().iter().skip(d).step_by(channels[l]).copied().collect();
            let want: Vec<f64> = pert[l].data().iter().skip(d).step_by(c).copied().collect();
            assert_eq!(got, want);
            for finer in 0..l {
                assert!(changed_channels(&base[finer], &out[finer]).is_empty(), "level {l} leaked into {finer}");
            }
        }
    }
}

#[test]
fn native_channels_lead_each_level() {
    let (spfpn, store, cfg) = pyramid(PyramidVariant::Spfpn);
    let init = init_volumes(&cfg, &mut ChaCha8Rng::seed_from_u64(8));
    let out = aggregate(&spfpn, &store, &init);
    for l in 0..3 {
        let (c_out, c_in) = (out[l].shape()[2], cfg.bins[l]);
        for (px, row) in out[l].data().chunks(c_out).enumerate() {
            assert_eq!(&row[..c_in], &init[l].data()[px * c_in..(px + 1) * c_in]);
        }
    }
}

#[test]
fn topdown_variant_mixes_bins_across_scales() {
    let (spfpn, store, cfg) = pyramid(PyramidVariant::TopdownFpn);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let init = init_volumes(&cfg, &mut rng);
    let base = aggregate(&spfpn, &store, &init);
    assert_eq!(base.iter().map(|t| t.shape()[2]).collect::<Vec<_>>(), cfg.bins.to_vec());
    let mut pert = init.clone();
    for (i, v) in pert[2].data_mut().iter_mut().enumerate() {
        if i % cfg.bins[2] == 0 {
            *v += 1.0;
        }
    }
    let out = aggregate(&spfpn, &store, &pert);
    assert!(changed_channels(&base[0], &out[0]).len() > 1, "coarse bin stayed isolated");
}

#[test]
fn every_variant_keeps_level_extents() {
    for variant in [PyramidVariant::Spfpn, PyramidVariant::TopdownFpn, PyramidVariant::BifpnLike] {
        let (spfpn, store, cfg) = pyramid(variant);
        let init = init_volumes(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let out = aggregate(&spfpn, &store, &init);
        for l in 0..3 {
            assert_eq!(out[l].shape()[..2], init[l].shape()[..2], "{} level {l}", variant.name());
        }
    }
}

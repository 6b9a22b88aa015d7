use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ts3d_core::config::PeMode;
use ts3d_core::decoder::{
    dape, deformable_sample, query_encoding, reference_points, sine_pe_2d, DeformableCrossAttention, MultiHeadSelfAttention,
};
use ts3d_core::nn::Linear;
use ts3d_core::tensor::ParamBuilder;
use ts3d_core::{Graph, ParamStore, Tensor};

fn uniform(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

#[test]
fn sine_encoding_matches_closed_form() {
    let (wq, hq, dims) = (5, 3, 16);
    let pe = sine_pe_2d::<f64>(wq, hq, dims).unwrap();
    assert_eq!(pe.shape(), [hq, wq, dims]);
    let half = dims / 2;
    for v in 0..hq {
        for u in 0..wq {
            let row = &pe.data()[(v * wq + u) * dims..(v * wq + u + 1) * dims];
            for (axis, pos) in [(0, u as f64), (1, v as f64)] {
                for i in 0..half / 2 {
                    let w = 10000f64.powf(-(2.0 * i as f64) / half as f64);
                    assert!((row[axis * half + 2 * i] - (pos * w).sin()).abs() < 1e-12);
                    assert!((row[axis * half + 2 * i + 1] - (pos * w).cos()).abs() < 1e-12);
                }
            }
        }
    }
    assert!(sine_pe_2d::<f64>(4, 4, 6).is_err());
}

#[test]
fn dape_rows_are_distributions_after_the_sine_block() {
    let (hq, wq, c_disp, c_dec) = (3, 4, 4, 16);
    let mut g = Graph::new();
    let logits = g.leaf(uniform(&[hq, wq, c_disp], 2, 4.0));
    let pe = dape(&mut g, logits, c_dec).unwrap();
    assert_eq!(g.shape(pe.pe_sine), [hq, wq, c_dec - c_disp]);
    assert_eq!(g.shape(pe.pe_disp), [hq, wq, c_disp]);
    assert_eq!(g.shape(pe.pe_da), [hq, wq, c_dec]);
    let sine = sine_pe_2d::<f64>(wq, hq, c_dec - c_disp).unwrap();
    let (da, disp) = (g.value(pe.pe_da).data(), g.value(pe.pe_disp).data());
    for px in 0..hq * wq {
        let row = &da[px * c_dec..(px + 1) * c_dec];
        assert_eq!(&row[..c_dec - c_disp], &sine.data()[px * (c_dec - c_disp)..(px + 1) * (c_dec - c_disp)]);
        assert_eq!(&row[c_dec - c_disp..], &disp[px * c_disp..(px + 1) * c_disp]);
        let s: f64 = row[c_dec - c_disp..].iter().sum();
        assert!((s - 1.0).abs() <= 1e-6, "pixel {px} sums to {s}");
    }
}

#[test]
fn saturated_logits_give_one_hot_disparity_encoding() {
    let (hq, wq, c_disp) = (2, 3, 4);
    let hot: Vec<usize> = (0..hq * wq).map(|px| (3 * px + 1) % c_disp).collect();
    let logits = Tensor::from_fn(&[hq, wq, c_disp], |i| if hot[i / c_disp] == i % c_disp { 1e3 } else { -1e3 });
    let mut g = Graph::new();
    let l = g.leaf(logits);
    let pe = dape(&mut g, l, 8).unwrap();
    for (i, &v) in g.value(pe.pe_disp).data().iter().enumerate() {
        assert_eq!(v, if hot[i / c_disp] == i % c_disp { 1.0 } else { 0.0 });
    }
    // Saturated DAPE equals the one-hot encoding in the disparity block.
    let onehot = query_encoding(&mut g, PeMode::OneHot, l, 8).unwrap().unwrap();
    let da = query_encoding(&mut g, PeMode::Dape, l, 8).unwrap().unwrap();
    let (a, b) = (g.value(onehot).data(), g.value(da).data());
    for px in 0..hq * wq {
        assert_eq!(&a[px * 8 + 4..px * 8 + 8], &b[px * 8 + 4..px * 8 + 8]);
    }
}

#[test]
fn dape_rejects_disparity_block_as_wide_as_decoder() {
    let mut g = Graph::new();
    let l = g.leaf(Tensor::<f64>::zeros(&[2, 2, 8]));
    assert!(dape(&mut g, l, 8).is_err());
}

#[test]
fn encodings_flatten_to_queries() {
    let mut g = Graph::new();
    let l = g.leaf(uniform(&[3, 4, 4], 1, 1.0));
    for mode in [PeMode::Dape, PeMode::Sine2d, PeMode::OneHot] {
        let pe = query_encoding(&mut g, mode, l, 16).unwrap().unwrap();
        assert_eq!(g.shape(pe), [12, 16], "{}", mode.name());
    }
    assert!(query_encoding(&mut g, PeMode::None, l, 16).unwrap().is_none());
}

#[test]
fn reference_points_are_cell_centres() {
    let refs = reference_points(4, 2);
    assert_eq!(refs.len(), 8);
    assert_eq!(refs[0], [0.125, 0.25]);
    assert_eq!(refs[5], [0.375, 0.75]);
}

/// Zero offsets, cell-centre references and all weight on one point make
/// each query read exactly one value pixel.
#[test]
fn identity_sampling_returns_value_projection_bit_exactly() {
    let (h, w, c, heads, points) = (4, 8, 8, 2, 3);
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let value = Linear::new(&mut ParamBuilder::new(&mut store, &mut rng), "value", c, c).unwrap();
    let mut g = Graph::with_params(&store);
    let feats = [g.leaf(uniform(&[h, w, c], 5, 1.0)), g.leaf(uniform(&[h / 2, w / 2, c], 6, 1.0))];
    let values: Vec<_> = feats.iter().map(|&f| value.forward(&mut g, f).unwrap()).collect();
    let refs = reference_points(w, h);
    let nq = refs.len();
    let per_q = heads * 2 * points;
    let offsets = g.leaf(Tensor::zeros(&[nq, 2 * per_q]));
    // Per head: level 0, point 1 carries all the weight.
    let weights = g.leaf(Tensor::from_fn(&[nq, per_q], |i| {
        let j = i % per_q;
        let (l, k) = ((j / points) % 2, j % points);
        if l == 0 && k == 1 { 1.0 } else { 0.0 }
    }));
    let out = deformable_sample(&mut g, &values, offsets, weights, &refs, heads, points).unwrap();
    let got = g.value(out).data();
    let want = g.value(values[0]).data();
    assert_eq!(got.len(), want.len());
    for (i, (a, b)) in got.iter().zip(want).enumerate() {
        assert_eq!(a.to_bits(), b.to_bits(), "element {i}");
    }
}

#[test]
fn fresh_cross_attention_weights_are_uniform_and_sum_to_one() {
    let (c, heads, levels, points) = (16, 4, 3, 2);
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ca = DeformableCrossAttention::new(&mut ParamBuilder::new(&mut store, &mut rng), "ca", c, heads, levels, points).unwrap();
    let mut g = Graph::with_params(&store);
    let q = g.leaf(uniform(&[5, c], 10, 1.0));
    let w = ca.attention_weights(&mut g, q).unwrap();
    for v in g.value(w).data() {
        assert!((v - 1.0 / (levels * points) as f64).abs() < 1e-12);
    }
}

#[test]
fn trained_cross_attention_weights_sum_to_one_per_head() {
    let (c, heads, levels, points) = (16, 4, 3, 4);
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ca = DeformableCrossAttention::new(&mut ParamBuilder::new(&mut store, &mut rng), "ca", c, heads, levels, points).unwrap();
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-2.0..2.0);
        }
    }
    let mut g = Graph::with_params(&store);
    let q = g.leaf(uniform(&[7, c], 10, 3.0));
    let w = ca.attention_weights(&mut g, q).unwrap();
    assert_eq!(g.shape(w), [7, heads * levels * points]);
    for group in g.value(w).data().chunks(levels * points) {
        let s: f64 = group.iter().sum();
        assert!((s - 1.0).abs() <= 1e-6, "{s}");
        assert!(group.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn self_attention_rows_sum_to_one() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mhsa = MultiHeadSelfAttention::new(&mut ParamBuilder::new(&mut store, &mut rng), "sa", 8, 2).unwrap();
    let mut g = Graph::with_params(&store);
    let q = g.leaf(uniform(&[6, 8], 3, 2.0));
    let p = mhsa.probabilities(&mut g, q).unwrap();
    assert_eq!(p.shape(), [2, 6, 6]);
    for row in p.data().chunks(6) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

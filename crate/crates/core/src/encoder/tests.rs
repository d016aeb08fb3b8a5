use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::features::{Split, WindowSample, F_NBR};
use crate::numerics::{grad_check_params, sigmoid, Graph, Mode, Tensor};
use crate::topology::METADATA_DIM;

fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        hidden: 4,
        gru_hidden: 3,
        ..EncoderConfig::default()
    }
}

fn dims(f_raw: usize) -> InputDims {
    InputDims {
        f_raw,
        f_nbr: F_NBR,
        f_meta: METADATA_DIM,
    }
}

fn sample(rng: &mut ChaCha8Rng, w: usize, k: usize, f_raw: usize) -> WindowSample {
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.5..1.5)).collect() };
    let x_raw = normal(w * f_raw);
    let x_nbr = normal(w * k * F_NBR);
    let mut meta = vec![0.0; METADATA_DIM];
    meta[1] = 1.0;
    meta[8] = 1.0;
    meta[11] = 1.0;
    meta[14] = 1.0;
    let labels = (0..w).map(|t| (t % 3 == 1) as u8).collect();
    WindowSample {
        ego: 0,
        start: 0,
        split: Split::Train,
        w,
        k,
        f_raw,
        x_raw,
        x_nbr,
        meta,
        labels,
    }
}

#[test]
fn normalization_cases() {
    assert_eq!(gcn_normalization(1, &[]).unwrap(), vec![(0, 0, 1.0)]);
    // Two-node star: every node has degree 2 with its self-loop.
    let e = gcn_normalization(2, &[(0, 1), (1, 0)]).unwrap();
    let dense = crate::numerics::RowMix::new(2, 2, e).unwrap().to_dense();
    for v in dense.data() {
        assert!((v - 0.5).abs() < 1e-15);
    }
    // Star with K = 3: ego degree 4, leaves degree 2.
    let edges: Vec<_> = (1..=3).flat_map(|j| [(0, j), (j, 0)]).collect();
    let dense = crate::numerics::RowMix::new(4, 4, gcn_normalization(4, &edges).unwrap())
        .unwrap()
        .to_dense();
    assert!((dense.get2(0, 0) - 0.25).abs() < 1e-15);
    assert!((dense.get2(0, 2) - 1.0 / 8f64.sqrt()).abs() < 1e-15);
    assert!((dense.get2(2, 2) - 0.5).abs() < 1e-15);
    assert_eq!(dense.get2(1, 2), 0.0);
}

#[test]
fn gcn_layer_cases() {
    let params: Vec<Tensor> = Vec::new();
    let mut g = Graph::new(&params, Mode::Eval);
    let z = g.constant(Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap());
    let w = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0], vec![3.0, -1.0]]).unwrap());
    let out = gcn_layer(&mut g, z, &[], w, None).unwrap();
    assert_eq!(g.value(out).data(), &[2.5, -0.5]);

    // Identity weights on constant rows leave the rows unchanged only if
    // each row of A_hat sums to one, which holds for a regular graph (K = 1).
    let z = g.constant(Tensor::from_rows(&[vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap());
    let eye = g.constant(Tensor::eye(2));
    let out = gcn_layer(&mut g, z, &[(0, 1), (1, 0)], eye, None).unwrap();
    for (a, b) in g.value(out).data().iter().zip([0.3, 0.7, 0.3, 0.7]) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn node_matrix_layout() {
    let params: Vec<Tensor> = Vec::new();
    let mut g = Graph::new(&params, Mode::Eval);
    let raw = g.constant(Tensor::full(&[1, 128], 1.0));
    let ego_only = build_node_matrix(&mut g, raw, None).unwrap();
    let v = g.value(ego_only);
    assert_eq!(v.shape(), &[1, 256]);
    assert!(v.row(0)[128..].iter().all(|&x| x == 0.0));

    let nbr = g.constant(Tensor::full(&[7, 128], 2.0));
    let z = build_node_matrix(&mut g, raw, Some(nbr)).unwrap();
    let v = g.value(z);
    assert_eq!(v.shape(), &[8, 256]);
    assert!(v.row(0)[..128].iter().all(|&x| x == 1.0));
    for j in 1..8 {
        assert!(v.row(j)[..128].iter().all(|&x| x == 0.0));
        assert!(v.row(j)[128..].iter().all(|&x| x == 2.0));
    }
}

#[test]
fn default_shapes() {
    let p = EncoderParams::init(&EncoderConfig::default(), dims(36)).unwrap();
    let shape = |name: &str| {
        let i = p.names().iter().position(|n| n == name).unwrap();
        p.tensors()[i].shape().to_vec()
    };
    assert_eq!(shape("ln_gain"), vec![1, 512]);
    assert_eq!(shape("gcn1_w"), vec![256, 256]);
    assert_eq!(shape("gcn2_w"), vec![256, 128]);
    assert_eq!(shape("gru_l0_fwd_w_ih"), vec![512, 576]);
    assert_eq!(shape("gru_l1_bwd_w_ih"), vec![384, 576]);
    assert_eq!(shape("head_w"), vec![384, 2]);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = sample(&mut rng, 9, 2, 36);
    let out = encode_window(&s, &p, Mode::Eval).unwrap();
    assert_eq!(out.logits.shape(), &[9, 2]);
    assert_eq!(out.probs.len(), 9);
    assert_eq!(encode_window(&s, &p, Mode::Eval).unwrap(), out);
}

#[test]
fn parameter_count_does_not_depend_on_k() {
    let p = EncoderParams::init(&tiny_config(), dims(36)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in [0, 1, 2, 4, 7] {
        let s = sample(&mut rng, 5, k, 36);
        let out = encode_window(&s, &p, Mode::Eval).unwrap();
        assert_eq!(out.probs.len(), 5);
    }
    let q = EncoderParams::init(&tiny_config(), dims(36)).unwrap();
    assert!(p.same_layout(&q));
    assert_eq!(p, q);
}

#[test]
fn probabilities_are_softmax_components() {
    let p = EncoderParams::init(&tiny_config(), dims(11)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = sample(&mut rng, 6, 3, 11);
    let out = encode_window(&s, &p, Mode::Eval).unwrap();
    for t in 0..6 {
        let (a, b) = (out.logits.get2(t, 0), out.logits.get2(t, 1));
        assert!((out.probs[t] - sigmoid(b - a)).abs() < 1e-15);
        assert!(out.probs[t] > 0.0 && out.probs[t] < 1.0);
    }
}

#[test]
fn train_mode_is_seeded() {
    let p = EncoderParams::init(&tiny_config(), dims(36)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = sample(&mut rng, 9, 2, 36);
    let a = encode_window(&s, &p, Mode::Train { seed: 11 }).unwrap();
    let b = encode_window(&s, &p, Mode::Train { seed: 11 }).unwrap();
    let c = encode_window(&s, &p, Mode::Train { seed: 12 }).unwrap();
    let e = encode_window(&s, &p, Mode::Eval).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, e);
}

#[test]
fn batched_prediction_matches_single_windows() {
    let p = EncoderParams::init(&tiny_config(), dims(36)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<_> = [2, 0, 4, 1, 2].iter().map(|&k| sample(&mut rng, 7, k, 36)).collect();
    let batched = predict(&p, &samples, 3).unwrap();
    for (s, probs) in samples.iter().zip(&batched) {
        let single = encode_window(s, &p, Mode::Eval).unwrap();
        for (a, b) in single.probs.iter().zip(probs) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}

#[test]
fn architecture_variants_keep_output_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = sample(&mut rng, 9, 2, 36);
    for arch in Arch::ALL {
        let cfg = EncoderConfig {
            arch,
            ..tiny_config()
        };
        let p = EncoderParams::init(&cfg, dims(36)).unwrap();
        let has_gcn = p.names().iter().any(|n| n.starts_with("gcn"));
        let has_gru = p.names().iter().any(|n| n.starts_with("gru"));
        assert_eq!(has_gcn, arch.uses_gcn());
        assert_eq!(has_gru, arch.uses_gru());
        let out = encode_window(&s, &p, Mode::Eval).unwrap();
        assert_eq!(out.logits.shape(), &[9, 2]);
        assert_eq!(arch.label().parse::<Arch>().unwrap(), arch);
    }
}

#[test]
fn dropped_blocks_remove_their_parameters() {
    let no_meta = InputDims {
        f_meta: 0,
        ..dims(36)
    };
    let p = EncoderParams::init(&tiny_config(), no_meta).unwrap();
    assert!(!p.names().iter().any(|n| n.starts_with("meta")));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut s = sample(&mut rng, 4, 1, 36);
    s.meta.clear();
    assert_eq!(encode_window(&s, &p, Mode::Eval).unwrap().probs.len(), 4);

    let no_nbr = InputDims { f_nbr: 0, ..dims(36) };
    let p = EncoderParams::init(&tiny_config(), no_nbr).unwrap();
    let s = sample(&mut rng, 4, 2, 36);
    assert!(matches!(encode_window(&s, &p, Mode::Eval), Err(crate::Error::Shape(_))));
}

#[test]
fn checkpoint_round_trip() {
    let p = EncoderParams::init(&tiny_config(), dims(36)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut notes = BTreeMap::new();
    notes.insert("best_round".to_string(), "3".to_string());
    let m = write_checkpoint(&p, dir.path(), notes).unwrap();
    let (back, m2) = read_checkpoint(dir.path()).unwrap();
    assert_eq!(back, p);
    assert_eq!(m, m2);
    for (a, b) in back.tensors().iter().zip(p.tensors()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    let path = dir.path().join(CHECKPOINT_MANIFEST);
    let text = std::fs::read_to_string(&path).unwrap();
    let bad = text.replace("hidden = 4", "hidden = 5");
    assert_ne!(bad, text);
    std::fs::write(&path, bad).unwrap();
    assert!(read_checkpoint(dir.path()).is_err());
}

#[test]
fn non_finite_input_names_the_layer() {
    let p = EncoderParams::init(&tiny_config(), dims(36)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut s = sample(&mut rng, 3, 1, 36);
    s.x_raw[0] = f64::INFINITY;
    match encode_window(&s, &p, Mode::Eval) {
        Err(crate::Error::NonFinite(layer)) => assert!(layer.contains("projection"), "{layer}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

// ---- naive reference forward ----

fn named<'a>(p: &'a EncoderParams, name: &str) -> &'a Tensor {
    let i = p.names().iter().position(|n| n == name).unwrap();
    &p.tensors()[i]
}

fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    (0..w.cols())
        .map(|c| b.data()[c] + x.iter().enumerate().map(|(r, v)| v * w.get2(r, c)).sum::<f64>())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn gru_ref(x: &[f64], h: &[f64], p: &EncoderParams, prefix: &str) -> Vec<f64> {
    let hd = h.len();
    let xg = affine(x, named(p, &format!("{prefix}_w_ih")), named(p, &format!("{prefix}_b_ih")));
    let hg = affine(h, named(p, &format!("{prefix}_w_hh")), named(p, &format!("{prefix}_b_hh")));
    (0..hd)
        .map(|i| {
            let z = sigmoid(xg[i] + hg[i]);
            let r = sigmoid(xg[hd + i] + hg[hd + i]);
            let n = (xg[2 * hd + i] + r * hg[2 * hd + i]).tanh();
            (1.0 - z) * n + z * h[i]
        })
        .collect()
}

/// Per-timestep attack probabilities computed with explicit loops.
fn reference_probs(p: &EncoderParams, s: &WindowSample) -> Vec<f64> {
    let cfg = &p.config;
    let (h, k, w) = (cfg.hidden, s.k, s.w);
    let meta = relu(affine(&s.meta, named(p, "meta_w"), named(p, "meta_b")));
    let n = k + 1;
    let deg: Vec<f64> = (0..n).map(|u| if u == 0 { n as f64 } else { 2.0 }).collect();
    let a_hat = |u: usize, v: usize| -> f64 {
        if u == v || u == 0 || v == 0 {
            1.0 / (deg[u] * deg[v]).sqrt()
        } else {
            0.0
        }
    };
    let conv = |z: &[Vec<f64>], wn: &str, bn: &str| -> Vec<Vec<f64>> {
        let zw: Vec<Vec<f64>> = z
            .iter()
            .map(|row| affine(row, named(p, wn), &Tensor::zeros(&[1, named(p, wn).cols()])))
            .collect();
        (0..n)
            .map(|u| {
                let b = named(p, bn);
                relu(
                    (0..b.len())
                        .map(|c| b.data()[c] + (0..n).map(|v| a_hat(u, v) * zw[v][c]).sum::<f64>())
                        .collect(),
                )
            })
            .collect()
    };
    let mut fused = Vec::new();
    for t in 0..w {
        let raw = relu(affine(&s.x_raw[t * s.f_raw..(t + 1) * s.f_raw], named(p, "raw_w"), named(p, "raw_b")));
        let nbrs: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                let x = &s.x_nbr[(t * k + j) * F_NBR..(t * k + j + 1) * F_NBR];
                relu(affine(x, named(p, "nbr_w"), named(p, "nbr_b")))
            })
            .collect();
        let mut z = vec![[raw.clone(), vec![0.0; h]].concat()];
        for nb in &nbrs {
            z.push([vec![0.0; h], nb.clone()].concat());
        }
        let g1 = conv(&z, "gcn1_w", "gcn1_b");
        let g2 = conv(&g1, "gcn2_w", "gcn2_b");
        let pool: Vec<f64> = (0..h).map(|c| g2.iter().map(|r| r[c]).sum::<f64>() / n as f64).collect();
        let hbar: Vec<f64> = if k == 0 {
            vec![0.0; h]
        } else {
            (0..h).map(|c| nbrs.iter().map(|r| r[c]).sum::<f64>() / k as f64).collect()
        };
        let x = [pool, hbar, meta.clone(), raw].concat();
        let d = x.len() as f64;
        let mean = x.iter().sum::<f64>() / d;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        let (gain, bias) = (named(p, "ln_gain"), named(p, "ln_bias"));
        fused.push(
            x.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + cfg.ln_eps).sqrt() * gain.data()[i] + bias.data()[i])
                .collect::<Vec<f64>>(),
        );
    }
    let mut seq = fused;
    for layer in 0..cfg.gru_layers {
        let mut fwd = vec![Vec::new(); w];
        let mut state = vec![0.0; cfg.gru_hidden];
        for t in 0..w {
            state = gru_ref(&seq[t], &state, p, &format!("gru_l{layer}_fwd"));
            fwd[t] = state.clone();
        }
        let mut bwd = vec![Vec::new(); w];
        let mut state = vec![0.0; cfg.gru_hidden];
        for t in (0..w).rev() {
            state = gru_ref(&seq[t], &state, p, &format!("gru_l{layer}_bwd"));
            bwd[t] = state.clone();
        }
        seq = (0..w).map(|t| [fwd[t].clone(), bwd[t].clone()].concat()).collect();
    }
    seq.iter()
        .map(|row| {
            let l = affine(row, named(p, "head_w"), named(p, "head_b"));
            let m = l[0].max(l[1]);
            let (e0, e1) = ((l[0] - m).exp(), (l[1] - m).exp());
            e1 / (e0 + e1)
        })
        .collect()
}

#[test]
fn forward_matches_naive_reference() {
    let cfg = EncoderConfig {
        hidden: 5,
        gru_hidden: 4,
        ..EncoderConfig::default()
    };
    let p = EncoderParams::init(&cfg, dims(36)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in [0, 1, 3] {
        let s = sample(&mut rng, 5, k, 36);
        let got = encode_window(&s, &p, Mode::Eval).unwrap().probs;
        let want = reference_probs(&p, &s);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "K={k}: {a} vs {b}");
        }
    }
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    let cfg = tiny_config();
    let p = EncoderParams::init(&cfg, dims(36)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let s = sample(&mut rng, 2, 1, 36);
    let batch = Batch::new(&[&s], &p.dims).unwrap();
    let weights: Vec<f64> = (0..2).map(|t| 0.3 + t as f64).collect();
    for mode in [Mode::Eval, Mode::Train { seed: 5 }] {
        let report = grad_check_params(p.tensors(), mode, 1e-6, 1e-4, |g| {
            let f = forward(g, &p, &batch)?;
            let c = g.mul_const(f.probs, Tensor::new(&[2, 1], weights.clone())?)?;
            Ok(g.sum(c))
        })
        .unwrap();
        assert!(report.passed(), "{mode:?}: {report:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn neighbor_order_does_not_matter(seed in 0u64..1000, k in 2usize..6, shift in 1usize..5) {
        let p = EncoderParams::init(&tiny_config(), dims(36)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sample(&mut rng, 4, k, 36);
        let mut permuted = s.clone();
        for t in 0..s.w {
            for j in 0..k {
                let src = (j + shift) % k;
                let dst = &mut permuted.x_nbr[(t * k + j) * F_NBR..(t * k + j + 1) * F_NBR];
                dst.copy_from_slice(&s.x_nbr[(t * k + src) * F_NBR..(t * k + src + 1) * F_NBR]);
            }
        }
        let a = encode_window(&s, &p, Mode::Eval).unwrap();
        let b = encode_window(&permuted, &p, Mode::Eval).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

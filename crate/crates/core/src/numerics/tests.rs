use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Scalarizes `out` as `sum(out * c)` with a fixed random `c`, so a check
/// exercises the whole Jacobian rather than its row sums.
fn project(g: &mut Graph<'_>, out: Var, seed: u64) -> Result<Var, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(out).shape().to_vec();
    let c = random(&mut rng, &shape, -1.0, 1.0);
    let w = g.mul_const(out, c)?;
    Ok(g.sum(w))
}

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn matmul_gradient_matches_finite_differences() {
    let a = t(&[vec![1.0, 2.0]]);
    let b = t(&[vec![3.0], vec![4.0]]);
    let params = vec![a, b];
    let mut g = Graph::new(&params, Mode::Eval);
    let (va, vb) = (g.param(0).unwrap(), g.param(1).unwrap());
    let c = g.matmul(va, vb).unwrap();
    let s = g.sum(c);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.param(0).unwrap().data(), &[3.0, 4.0]);

    // Independent oracle: central differences with step 1e-6.
    let h = 1e-6;
    let f = |a0: f64, a1: f64| a0 * 3.0 + a1 * 4.0;
    let n0 = (f(1.0 + h, 2.0) - f(1.0 - h, 2.0)) / (2.0 * h);
    let n1 = (f(1.0, 2.0 + h) - f(1.0, 2.0 - h)) / (2.0 * h);
    assert!((n0 - 3.0).abs() < 1e-6 && (n1 - 4.0).abs() < 1e-6);
    let report = grad_check_params(&params, Mode::Eval, 1e-6, 1e-6, |g| {
        let (a, b) = (g.param(0)?, g.param(1)?);
        let c = g.matmul(a, b)?;
        Ok(g.sum(c))
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn relu_softmax_sigmoid_values() {
    let params: Vec<Tensor> = vec![];
    let mut g = Graph::new(&params, Mode::Eval);
    let x = g.constant(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);

    let z = g.constant(Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap());
    let s = g.softmax_rows(z);
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
}

#[test]
fn sigmoid_derivative_at_zero() {
    let report = grad_check(
        |g, x| {
            let s = g.sigmoid(x);
            Ok(g.sum(s))
        },
        &Tensor::scalar(0.0),
        STEP,
        TOL,
    )
    .unwrap();
    assert!(report.passed());
    let p = vec![Tensor::scalar(0.0)];
    let mut g = Graph::new(&p, Mode::Eval);
    let x = g.param(0).unwrap();
    let s = g.sigmoid(x);
    let grads = g.backward(s).unwrap();
    let expected = sigmoid(0.0) * (1.0 - sigmoid(0.0));
    assert_eq!(expected, 0.25);
    assert_eq!(grads.param(0).unwrap().data()[0], expected);
}

#[test]
fn log_of_non_positive_is_domain_error() {
    let params: Vec<Tensor> = vec![];
    let mut g = Graph::new(&params, Mode::Eval);
    let x = g.constant(Tensor::new(&[2], vec![1.0, 0.0]).unwrap());
    assert!(matches!(g.log(x), Err(Error::Domain(_))));
    let y = g.constant(Tensor::new(&[1], vec![-2.0]).unwrap());
    assert!(matches!(g.log(y), Err(Error::Domain(_))));
}

#[test]
fn broadcast_is_limited_to_row_vectors() {
    let params: Vec<Tensor> = vec![];
    let mut g = Graph::new(&params, Mode::Eval);
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let row = g.constant(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let col = g.constant(Tensor::zeros(&[2, 1]));
    let s = g.add(a, row).unwrap();
    assert_eq!(g.value(s).row(1), &[1.0, 2.0, 3.0]);
    assert!(matches!(g.add(a, col), Err(Error::Shape(_))));
    assert!(matches!(g.mul(a, col), Err(Error::Shape(_))));
}

#[test]
fn layernorm_examples() {
    let p = vec![
        Tensor::new(&[1, 3], vec![1.0, 1.0, 1.0]).unwrap(),
        Tensor::full(&[3], 1.0),
        Tensor::zeros(&[3]),
    ];
    let mut g = Graph::new(&p, Mode::Eval);
    let (x, gain, bias) = (g.param(0).unwrap(), g.param(1).unwrap(), g.param(2).unwrap());
    let y = g.layernorm(x, gain, bias, 1e-5).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);

    let p = vec![
        Tensor::new(&[1, 2], vec![-1.0, 1.0]).unwrap(),
        Tensor::full(&[2], 1.0),
        Tensor::zeros(&[2]),
    ];
    let mut g = Graph::new(&p, Mode::Eval);
    let (x, gain, bias) = (g.param(0).unwrap(), g.param(1).unwrap(), g.param(2).unwrap());
    let y = g.layernorm(x, gain, bias, 1e-14).unwrap();
    for (v, e) in g.value(y).data().iter().zip([-1.0, 1.0]) {
        assert!((v - e).abs() < 1e-12);
    }
}

#[test]
fn layernorm_gradient_random_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = vec![
        random(&mut rng, &[1, 5], -2.0, 2.0),
        random(&mut rng, &[5], 0.5, 1.5),
        random(&mut rng, &[5], -0.5, 0.5),
    ];
    let report = grad_check_params(&params, Mode::Eval, STEP, TOL, |g| {
        let (x, a, b) = (g.param(0)?, g.param(1)?, g.param(2)?);
        let y = g.layernorm(x, a, b, 1e-5)?;
        project(g, y, 5)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn gru_cell_examples() {
    let d_in = 3;
    let d_h = 4;
    let h0 = Tensor::new(&[1, d_h], vec![0.4, -1.0, 2.0, 0.0]).unwrap();
    let zero_params = vec![
        Tensor::new(&[1, d_in], vec![1.0, -2.0, 0.5]).unwrap(),
        h0.clone(),
        Tensor::zeros(&[d_in, 3 * d_h]),
        Tensor::zeros(&[d_h, 3 * d_h]),
        Tensor::zeros(&[3 * d_h]),
        Tensor::zeros(&[3 * d_h]),
    ];
    let mut g = Graph::new(&zero_params, Mode::Eval);
    let vars: Vec<Var> = (0..6).map(|i| g.param(i).unwrap()).collect();
    let w = GruWeights {
        w_ih: vars[2],
        w_hh: vars[3],
        b_ih: vars[4],
        b_hh: vars[5],
    };
    let out = gru_cell(&mut g, vars[0], vars[1], &w).unwrap();
    // z = sigmoid(0) = 0.5, n = tanh(0) = 0, so h' = 0.5 h.
    let expect: Vec<f64> = h0.data().iter().map(|v| 0.5 * v).collect();
    assert_eq!(g.value(out).data(), expect.as_slice());

    // h = 0 with zero candidate weights gives 0 whatever the gates do.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut w_ih = random(&mut rng, &[d_in, 3 * d_h], -1.0, 1.0);
    let mut w_hh = random(&mut rng, &[d_h, 3 * d_h], -1.0, 1.0);
    let mut b_ih = random(&mut rng, &[3 * d_h], -1.0, 1.0);
    let mut b_hh = random(&mut rng, &[3 * d_h], -1.0, 1.0);
    for r in 0..d_in {
        for c in 2 * d_h..3 * d_h {
            w_ih.data_mut()[r * 3 * d_h + c] = 0.0;
        }
    }
    for r in 0..d_h {
        for c in 2 * d_h..3 * d_h {
            w_hh.data_mut()[r * 3 * d_h + c] = 0.0;
        }
    }
    for c in 2 * d_h..3 * d_h {
        b_ih.data_mut()[c] = 0.0;
        b_hh.data_mut()[c] = 0.0;
    }
    let p = vec![
        random(&mut rng, &[1, d_in], -1.0, 1.0),
        Tensor::zeros(&[1, d_h]),
        w_ih,
        w_hh,
        b_ih,
        b_hh,
    ];
    let mut g = Graph::new(&p, Mode::Eval);
    let v: Vec<Var> = (0..6).map(|i| g.param(i).unwrap()).collect();
    let w = GruWeights {
        w_ih: v[2],
        w_hh: v[3],
        b_ih: v[4],
        b_hh: v[5],
    };
    let out = gru_cell(&mut g, v[0], v[1], &w).unwrap();
    assert!(g.value(out).data().iter().all(|&x| x == 0.0));
}

#[test]
fn gru_cell_shape_mismatch() {
    let p = vec![
        Tensor::zeros(&[1, 3]),
        Tensor::zeros(&[1, 4]),
        Tensor::zeros(&[3, 9]),
        Tensor::zeros(&[4, 9]),
        Tensor::zeros(&[9]),
        Tensor::zeros(&[9]),
    ];
    let mut g = Graph::new(&p, Mode::Eval);
    let v: Vec<Var> = (0..6).map(|i| g.param(i).unwrap()).collect();
    let w = GruWeights {
        w_ih: v[2],
        w_hh: v[3],
        b_ih: v[4],
        b_hh: v[5],
    };
    assert!(matches!(gru_cell(&mut g, v[0], v[1], &w), Err(Error::Shape(_))));
}

#[test]
fn gru_cell_gradient_random() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let params = vec![
        random(&mut rng, &[2, 3], -1.0, 1.0),
        random(&mut rng, &[2, 4], -1.0, 1.0),
        random(&mut rng, &[3, 12], -0.8, 0.8),
        random(&mut rng, &[4, 12], -0.8, 0.8),
        random(&mut rng, &[12], -0.3, 0.3),
        random(&mut rng, &[12], -0.3, 0.3),
    ];
    let report = grad_check_params(&params, Mode::Eval, STEP, TOL, |g| {
        let v: Vec<Var> = (0..6).map(|i| g.param(i)).collect::<Result<_, _>>()?;
        let w = GruWeights {
            w_ih: v[2],
            w_hh: v[3],
            b_ih: v[4],
            b_hh: v[5],
        };
        let h = gru_cell(g, v[0], v[1], &w)?;
        project(g, h, 9)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn grad_check_scalar_examples() {
    let sq = grad_check(
        |g, x| {
            let y = g.mul(x, x)?;
            Ok(g.sum(y))
        },
        &Tensor::scalar(3.0),
        1e-6,
        1e-8,
    )
    .unwrap();
    assert!(sq.passed(), "{sq:?}");

    let p = vec![Tensor::scalar(3.0)];
    let mut g = Graph::new(&p, Mode::Eval);
    let x = g.param(0).unwrap();
    let y = g.mul(x, x).unwrap();
    assert_eq!(g.backward(y).unwrap().param(0).unwrap().data()[0], 6.0);

    let relu = grad_check(
        |g, x| {
            let y = g.relu(x);
            Ok(g.sum(y))
        },
        &Tensor::scalar(2.0),
        STEP,
        TOL,
    )
    .unwrap();
    assert!(relu.passed());
    let p = vec![Tensor::scalar(2.0)];
    let mut g = Graph::new(&p, Mode::Eval);
    let x = g.param(0).unwrap();
    let y = g.relu(x);
    assert_eq!(g.backward(y).unwrap().param(0).unwrap().data()[0], 1.0);
}

#[test]
fn grad_check_rejects_non_finite_objective() {
    let err = grad_check(
        |g, x| {
            let y = g.scale(x, f64::INFINITY);
            Ok(g.sum(y))
        },
        &Tensor::scalar(1.0),
        STEP,
        TOL,
    );
    assert!(matches!(err, Err(Error::NonFinite(_))));
}

type UnaryBuild = fn(&mut Graph<'_>, Var) -> Result<Var, Error>;

/// Every differentiable op, checked at 10 random points.
#[test]
fn every_op_matches_finite_differences() {
    let unary: Vec<(&str, UnaryBuild, f64, f64)> = vec![
        ("relu", |g, x| Ok(g.relu(x)), -2.0, 2.0),
        ("sigmoid", |g, x| Ok(g.sigmoid(x)), -3.0, 3.0),
        ("tanh", |g, x| Ok(g.tanh(x)), -3.0, 3.0),
        ("log", |g, x| g.log(x), 0.2, 3.0),
        ("softmax", |g, x| Ok(g.softmax_rows(x)), -3.0, 3.0),
        ("scale", |g, x| Ok(g.scale(x, -1.7)), -3.0, 3.0),
        ("one_minus", |g, x| Ok(g.one_minus(x)), -3.0, 3.0),
        ("clamp", |g, x| Ok(g.clamp(x, -0.5, 0.5)), -1.0, 1.0),
        ("slice_cols", |g, x| g.slice_cols(x, 1, 3), -1.0, 1.0),
        ("slice_rows", |g, x| g.slice_rows(x, 1, 3), -1.0, 1.0),
        ("mean", |g, x| Ok(g.mean(x)), -1.0, 1.0),
        ("self_mul", |g, x| g.mul(x, x), -2.0, 2.0),
        (
            "row_mix",
            |g, x| {
                let mix = Arc::new(
                    RowMix::new(3, 2, vec![(0, 0, 0.5), (0, 2, -1.5), (1, 1, 2.0), (1, 0, 0.25)])
                        .unwrap(),
                );
                g.row_mix(x, &mix)
            },
            -1.0,
            1.0,
        ),
        (
            "concat",
            |g, x| {
                let y = g.tanh(x);
                let c = g.concat_cols(&[x, y])?;
                let r = g.concat_rows(&[c, c])?;
                Ok(r)
            },
            -1.0,
            1.0,
        ),
        (
            "dropout",
            |g, x| g.dropout(x, 0.3),
            -1.0,
            1.0,
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for (name, build, lo, hi) in unary {
        for trial in 0..10 {
            let mut x = random(&mut rng, &[3, 4], lo, hi);
            if name == "relu" || name == "clamp" {
                // Keep points away from kinks.
                for v in x.data_mut() {
                    if (v.abs() - 0.5).abs() < 0.01 || v.abs() < 0.01 {
                        *v += 0.05;
                    }
                }
            }
            let p = vec![x];
            let report = grad_check_params(&p, Mode::Train { seed: trial }, STEP, TOL, |g| {
                let x = g.param(0)?;
                let y = build(g, x)?;
                project(g, y, 100 + trial)
            })
            .unwrap();
            assert!(report.passed(), "{name} trial {trial}: {report:?}");
        }
    }

    type BinaryBuild = fn(&mut Graph<'_>, Var, Var) -> Result<Var, Error>;
    let binary: Vec<(&str, BinaryBuild, [usize; 2], [usize; 2])> = vec![
        ("matmul", |g, a, b| g.matmul(a, b), [3, 4], [4, 2]),
        ("add", |g, a, b| g.add(a, b), [3, 4], [3, 4]),
        ("add_row", |g, a, b| g.add(a, b), [3, 4], [1, 4]),
        ("sub", |g, a, b| g.sub(a, b), [3, 4], [3, 4]),
        ("mul", |g, a, b| g.mul(a, b), [3, 4], [3, 4]),
        ("mul_row", |g, a, b| g.mul(a, b), [3, 4], [1, 4]),
    ];
    for (name, build, sa, sb) in binary {
        for trial in 0..10 {
            let p = vec![
                random(&mut rng, &sa, -1.5, 1.5),
                random(&mut rng, &sb, -1.5, 1.5),
            ];
            let report = grad_check_params(&p, Mode::Eval, STEP, TOL, |g| {
                let (a, b) = (g.param(0)?, g.param(1)?);
                let y = build(g, a, b)?;
                project(g, y, 200 + trial)
            })
            .unwrap();
            assert!(report.passed(), "{name} trial {trial}: {report:?}");
        }
    }

    for trial in 0..10 {
        let p = vec![
            random(&mut rng, &[3, 6], -2.0, 2.0),
            random(&mut rng, &[6], 0.5, 1.5),
            random(&mut rng, &[6], -0.5, 0.5),
        ];
        let report = grad_check_params(&p, Mode::Eval, STEP, TOL, |g| {
            let (x, a, b) = (g.param(0)?, g.param(1)?, g.param(2)?);
            let y = g.layernorm(x, a, b, 1e-5)?;
            project(g, y, 300 + trial)
        })
        .unwrap();
        assert!(report.passed(), "layernorm trial {trial}: {report:?}");
    }
}

#[test]
fn parameter_reuse_accumulates() {
    let p = vec![Tensor::new(&[1, 2], vec![1.5, -2.0]).unwrap()];
    // Single use: d/dx sum(3x) = 3.
    let mut g = Graph::new(&p, Mode::Eval);
    let x = g.param(0).unwrap();
    let y = g.scale(x, 3.0);
    let s = g.sum(y);
    assert_eq!(g.backward(s).unwrap().param(0).unwrap().data(), &[3.0, 3.0]);

    // Two separate handles to the same parameter: contributions sum.
    let mut g = Graph::new(&p, Mode::Eval);
    let x1 = g.param(0).unwrap();
    let x2 = g.param(0).unwrap();
    let a = g.scale(x1, 3.0);
    let b = g.scale(x2, 4.0);
    let c = g.add(a, b).unwrap();
    let s = g.sum(c);
    assert_eq!(g.backward(s).unwrap().param(0).unwrap().data(), &[7.0, 7.0]);
}

#[test]
fn softmax_and_layernorm_row_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x = random(&mut rng, &[50, 7], -30.0, 30.0);
    let p = vec![x, Tensor::full(&[7], 1.0), Tensor::zeros(&[7])];
    let mut g = Graph::new(&p, Mode::Eval);
    let v = g.param(0).unwrap();
    let s = g.softmax_rows(v);
    for r in 0..50 {
        let total: f64 = g.value(s).row(r).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
    let (a, b) = (g.param(1).unwrap(), g.param(2).unwrap());
    let ln = g.layernorm(v, a, b, 1e-5).unwrap();
    for r in 0..50 {
        let mean: f64 = g.value(ln).row(r).iter().sum::<f64>() / 7.0;
        assert!(mean.abs() < 1e-10);
    }
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = vec![random(&mut rng, &[4, 6], -1.0, 1.0), random(&mut rng, &[6, 3], -1.0, 1.0)];
    let run = || {
        let mut g = Graph::new(&p, Mode::Train { seed: 42 });
        let (a, b) = (g.param(0).unwrap(), g.param(1).unwrap());
        let d = g.dropout(a, 0.2).unwrap();
        let m = g.matmul(d, b).unwrap();
        let s = g.softmax_rows(m);
        g.value(s).clone()
    };
    let first = run();
    let second = run();
    assert_eq!(
        first.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        second.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn dropout_is_identity_in_eval_mode() {
    let p = vec![Tensor::full(&[2, 2], 1.0)];
    let mut g = Graph::new(&p, Mode::Eval);
    let x = g.param(0).unwrap();
    let y = g.dropout(x, 0.5).unwrap();
    assert_eq!(x, y);
}

#[test]
fn row_mix_dense_equivalence() {
    let mix = RowMix::new(3, 2, vec![(0, 0, 0.5), (0, 2, -1.0), (1, 1, 2.0)]).unwrap();
    let x = t(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
    let dense = mix.to_dense().matmul(&x).unwrap();
    let p: Vec<Tensor> = vec![];
    let mut g = Graph::new(&p, Mode::Eval);
    let v = g.constant(x);
    let y = g.row_mix(v, &Arc::new(mix)).unwrap();
    assert_eq!(g.value(y), &dense);
    assert!(RowMix::new(2, 2, vec![(0, 5, 1.0)]).is_err());
}

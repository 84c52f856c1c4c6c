//! Numeric kernel checks: finite-difference gradients for every op, hand
//! cases and analytic loss values.

use mdmer::nn::ops;
use mdmer::nn::{
    adam_step, grad_check, grad_check_params, grad_check_with, multi_head_attention,
    scaled_dot_attention, AdamConfig, AdamState, AttentionParams, DropoutKey, EncoderLayerParams,
    Graph, Mode, ParamStore, Tensor, Var,
};
use mdmer::Result;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rng;

const TOL: f64 = 1e-4;
const INSTANCES: u64 = 5;

fn rand_tensor(r: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks sit outside the FD stencil.
fn off_zero(r: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    rand_tensor(r, shape).map(|v| if v < 0.0 { v - 0.1 } else { v + 0.1 })
}

/// Reduce any node to a scalar through fixed pseudo-random weights.
fn readout(g: &mut Graph<'_, f64>, y: Var) -> Result<Var> {
    let n = g.value(y).len();
    let w = rand_tensor(&mut rng(n as u64), vec![n, 1]);
    let flat = g.reshape(y, vec![1, n])?;
    let w = g.input(w, false);
    g.matmul(flat, w)
}

fn check(name: &str, err: f64) {
    assert!(err < TOL, "{name}: relative gradient error {err:e}");
}

fn check_instances(name: &str, mut case: impl FnMut(&mut ChaCha8Rng) -> f64) {
    for seed in 0..INSTANCES {
        check(&format!("{name} #{seed}"), case(&mut rng(1000 + seed)));
    }
}

fn linear_algebra_grads() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        check_instances(&format!("matmul_t({ta},{tb}) lhs"), |r| {
            let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
            let a = rand_tensor(r, if ta { vec![k, m] } else { vec![m, k] });
            let b = rand_tensor(r, if tb { vec![n, k] } else { vec![k, n] });
            grad_check(
                |g, x| {
                    let bv = g.input(b.clone(), false);
                    let y = g.matmul_t(x, bv, ta, tb)?;
                    readout(g, y)
                },
                &a,
            )
            .unwrap()
        });
        check_instances(&format!("matmul_t({ta},{tb}) rhs"), |r| {
            let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
            let a = rand_tensor(r, if ta { vec![k, m] } else { vec![m, k] });
            let b = rand_tensor(r, if tb { vec![n, k] } else { vec![k, n] });
            grad_check(
                |g, x| {
                    let av = g.input(a.clone(), false);
                    let y = g.matmul_t(av, x, ta, tb)?;
                    readout(g, y)
                },
                &b,
            )
            .unwrap()
        });
    }
    check_instances("add", |r| {
        let s = vec![r.gen_range(1..5), r.gen_range(1..5)];
        let other = rand_tensor(r, s.clone());
        grad_check(
            |g, x| {
                let o = g.input(other.clone(), false);
                let y = g.add(x, o)?;
                let y = g.add(y, x)?;
                readout(g, y)
            },
            &rand_tensor(r, s),
        )
        .unwrap()
    });
    check_instances("add_row", |r| {
        let (m, n) = (r.gen_range(1..5), r.gen_range(1..5));
        let x = rand_tensor(r, vec![m, n]);
        let row = rand_tensor(r, vec![n]);
        let via_row = grad_check(
            |g, v| {
                let xv = g.input(x.clone(), false);
                let y = g.add_row(xv, v)?;
                readout(g, y)
            },
            &row,
        )
        .unwrap();
        let via_x = grad_check(
            |g, v| {
                let rv = g.input(row.clone(), false);
                let y = g.add_row(v, rv)?;
                readout(g, y)
            },
            &x,
        )
        .unwrap();
        via_row.max(via_x)
    });
    check_instances("scale", |r| {
        let s = r.gen_range(-3.0..3.0);
        grad_check(
            |g, x| {
                let y = g.scale(x, s);
                readout(g, y)
            },
            &rand_tensor(r, vec![3, 4]),
        )
        .unwrap()
    });
    check_instances("transpose", |r| {
        grad_check(
            |g, x| {
                let y = g.transpose(x)?;
                let w = g.input(rand_tensor(&mut rng(5), vec![3, 2]), false);
                let y = g.matmul(y, w)?;
                readout(g, y)
            },
            &rand_tensor(r, vec![3, 4]),
        )
        .unwrap()
    });
    check_instances("reshape", |r| {
        grad_check(
            |g, x| {
                let y = g.reshape(x, vec![6, 2])?;
                let w = g.input(rand_tensor(&mut rng(6), vec![2, 3]), false);
                let y = g.matmul(y, w)?;
                readout(g, y)
            },
            &rand_tensor(r, vec![3, 4]),
        )
        .unwrap()
    });
    check_instances("concat_cols", |r| {
        let other = rand_tensor(r, vec![3, 2]);
        grad_check(
            |g, x| {
                let o = g.input(other.clone(), false);
                let y = g.concat_cols(&[x, o, x])?;
                readout(g, y)
            },
            &rand_tensor(r, vec![3, 4]),
        )
        .unwrap()
    });
    check_instances("gather", |r| {
        let idx: Vec<usize> = (0..7).map(|_| r.gen_range(0..4)).collect();
        grad_check(
            |g, x| {
                let y = g.gather(x, &idx)?;
                readout(g, y)
            },
            &rand_tensor(r, vec![4, 3]),
        )
        .unwrap()
    });
    check_instances("mean_rows", |r| {
        grad_check(
            |g, x| {
                let y = g.mean_rows(x)?;
                readout(g, y)
            },
            &rand_tensor(r, vec![5, 3]),
        )
        .unwrap()
    });
    check_instances("sum", |r| {
        grad_check(
            |g, x| {
                let y = g.relu(x);
                Ok(g.sum(y))
            },
            &off_zero(r, vec![4, 4]),
        )
        .unwrap()
    });
}

fn nonlinear_grads() {
    check_instances("relu", |r| {
        grad_check(
            |g, x| {
                let y = g.relu(x);
                readout(g, y)
            },
            &off_zero(r, vec![4, 5]),
        )
        .unwrap()
    });
    check_instances("softmax_rows", |r| {
        grad_check(
            |g, x| {
                let y = g.softmax_rows(x)?;
                readout(g, y)
            },
            &rand_tensor(r, vec![3, 5]).map(|v| 3.0 * v),
        )
        .unwrap()
    });
    check_instances("layer_norm", |r| {
        let (m, n) = (r.gen_range(1..4), r.gen_range(2..6));
        let x = rand_tensor(r, vec![m, n]);
        let gain = rand_tensor(r, vec![n]).map(|v| v + 1.5);
        let bias = rand_tensor(r, vec![n]);
        let ln = |g: &mut Graph<'_, f64>, x: Var, ga: Var, b: Var| -> Result<Var> {
            let y = g.layer_norm(x, ga, b)?;
            readout(g, y)
        };
        let ex = grad_check(
            |g, v| {
                let (ga, b) = (g.input(gain.clone(), false), g.input(bias.clone(), false));
                ln(g, v, ga, b)
            },
            &x,
        )
        .unwrap();
        let eg = grad_check(
            |g, v| {
                let (xv, b) = (g.input(x.clone(), false), g.input(bias.clone(), false));
                ln(g, xv, v, b)
            },
            &gain,
        )
        .unwrap();
        let eb = grad_check(
            |g, v| {
                let (xv, ga) = (g.input(x.clone(), false), g.input(gain.clone(), false));
                ln(g, xv, ga, v)
            },
            &bias,
        )
        .unwrap();
        ex.max(eg).max(eb)
    });
    check_instances("conv3x3", |r| {
        let (c_in, c_out, h, w) = (
            r.gen_range(1..3),
            r.gen_range(1..3),
            r.gen_range(2..5),
            r.gen_range(2..5),
        );
        let x = rand_tensor(r, vec![c_in, h, w]);
        let k = rand_tensor(r, vec![c_out, c_in, 3, 3]);
        let b = rand_tensor(r, vec![c_out]);
        let ex = grad_check(
            |g, v| {
                let (kv, bv) = (g.input(k.clone(), false), g.input(b.clone(), false));
                let y = g.conv3x3(v, kv, bv)?;
                readout(g, y)
            },
            &x,
        )
        .unwrap();
        let ek = grad_check(
            |g, v| {
                let (xv, bv) = (g.input(x.clone(), false), g.input(b.clone(), false));
                let y = g.conv3x3(xv, v, bv)?;
                readout(g, y)
            },
            &k,
        )
        .unwrap();
        let eb = grad_check(
            |g, v| {
                let (xv, kv) = (g.input(x.clone(), false), g.input(k.clone(), false));
                let y = g.conv3x3(xv, kv, v)?;
                readout(g, y)
            },
            &b,
        )
        .unwrap();
        ex.max(ek).max(eb)
    });
    check_instances("maxpool2", |r| {
        let (c, h, w) = (
            r.gen_range(1..3),
            2 * r.gen_range(1..4),
            2 * r.gen_range(1..4),
        );
        let mut vals: Vec<f64> = (0..c * h * w).map(|i| i as f64 * 0.05).collect();
        vals.shuffle(r);
        grad_check(
            |g, x| {
                let y = g.maxpool2(x)?;
                readout(g, y)
            },
            &Tensor::new(vec![c, h, w], vals).unwrap(),
        )
        .unwrap()
    });
    check_instances("bce_with_logit", |r| {
        let target = r.gen_bool(0.5);
        grad_check(
            |g, x| g.bce_with_logit(x, target),
            &rand_tensor(r, vec![1]).map(|v| 4.0 * v),
        )
        .unwrap()
    });
    check_instances("cross_entropy", |r| {
        let class = r.gen_range(0..4);
        grad_check(
            |g, x| g.cross_entropy(x, class),
            &rand_tensor(r, vec![4]).map(|v| 3.0 * v),
        )
        .unwrap()
    });
    check_instances("weighted_sum", |r| {
        let (w1, w2) = (r.gen_range(0.0..2.0), r.gen_range(0.0..2.0));
        grad_check(
            |g, x| {
                let a = g.cross_entropy(x, 1)?;
                let s = g.sum(x);
                g.weighted_sum(&[(a, w1), (s, w2)])
            },
            &rand_tensor(r, vec![4]),
        )
        .unwrap()
    });
}

/// Dropout is linear for a fixed mask: the gradient of `Σy` is `y / x`.
fn dropout_gradient() {
    for seed in 0..INSTANCES {
        let x = off_zero(&mut rng(2000 + seed), vec![6, 7]);
        let store = ParamStore::new();
        let mode = Mode {
            train: true,
            dropout_key: DropoutKey {
                seed,
                step: 3,
                sample: 1,
            },
        };
        let mut g = Graph::new(&store).with_mode(mode);
        let xv = g.input(x.clone(), true);
        let y = g.dropout(xv, 0.3, 9);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        let gx = grads.input(xv).unwrap();
        let yv = g.value(y).data();
        assert!(yv.contains(&0.0) && yv.iter().any(|&v| v != 0.0));
        for ((&gi, &yi), &xi) in gx.iter().zip(yv).zip(x.data()) {
            assert!((gi - yi / xi).abs() < 1e-12);
        }
    }
}

fn attention_grads() {
    check_instances("scaled_dot_attention", |r| {
        let (nq, nk, d, dv) = (
            r.gen_range(1..4),
            r.gen_range(1..5),
            r.gen_range(1..4),
            r.gen_range(1..4),
        );
        let (q, k, v) = (
            rand_tensor(r, vec![nq, d]),
            rand_tensor(r, vec![nk, d]),
            rand_tensor(r, vec![nk, dv]),
        );
        let attn = |g: &mut Graph<'_, f64>, q: Var, k: Var, v: Var| -> Result<Var> {
            let y = scaled_dot_attention(g, q, k, v)?;
            readout(g, y)
        };
        let eq = grad_check(
            |g, x| {
                let (kv, vv) = (g.input(k.clone(), false), g.input(v.clone(), false));
                attn(g, x, kv, vv)
            },
            &q,
        )
        .unwrap();
        let ek = grad_check(
            |g, x| {
                let (qv, vv) = (g.input(q.clone(), false), g.input(v.clone(), false));
                attn(g, qv, x, vv)
            },
            &k,
        )
        .unwrap();
        let ev = grad_check(
            |g, x| {
                let (qv, kv) = (g.input(q.clone(), false), g.input(k.clone(), false));
                attn(g, qv, kv, x)
            },
            &v,
        )
        .unwrap();
        eq.max(ek).max(ev)
    });
    check_instances("multi_head_attention", |r| {
        let mut store = ParamStore::new();
        let p = AttentionParams::new(&mut store, "mha", 4, 2, r).unwrap();
        let (na, nb) = (r.gen_range(1..4), r.gen_range(1..4));
        let beta = rand_tensor(r, vec![nb, 4]);
        let alpha = rand_tensor(r, vec![na, 4]);
        let e_in = grad_check_with(
            &store,
            |g, x| {
                let b = g.input(beta.clone(), false);
                let y = multi_head_attention(g, x, b, &p)?;
                readout(g, y)
            },
            &alpha,
        )
        .unwrap();
        let params = grad_check_params(
            &store,
            |g| {
                let (a, b) = (g.input(alpha.clone(), false), g.input(beta.clone(), false));
                let y = multi_head_attention(g, a, b, &p)?;
                readout(g, y)
            },
            16,
            r.gen(),
        )
        .unwrap();
        params.iter().map(|c| c.max_rel_error).fold(e_in, f64::max)
    });
    check_instances("transformer_encoder_layer", |r| {
        let mut store = ParamStore::new();
        let p = EncoderLayerParams::new(&mut store, "enc", 4, 2, 8, 0.1, 0, r).unwrap();
        let n = r.gen_range(2..5);
        let x = rand_tensor(r, vec![n, 4]);
        let e_in = grad_check_with(
            &store,
            |g, v| {
                let y = p.forward(g, v)?;
                readout(g, y)
            },
            &x,
        )
        .unwrap();
        let params = grad_check_params(
            &store,
            |g| {
                let xv = g.input(x.clone(), false);
                let y = p.forward(g, xv)?;
                readout(g, y)
            },
            16,
            r.gen(),
        )
        .unwrap();
        params.iter().map(|c| c.max_rel_error).fold(e_in, f64::max)
    });
}

pub fn every_op_passes_grad_check() {
    linear_algebra_grads();
    nonlinear_grads();
    dropout_gradient();
    attention_grads();
}

fn t(shape: Vec<usize>, data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

pub fn attention_hand_case() {
    let ln3 = 3f64.ln();
    let out = ops::scaled_dot_attention(
        &t(vec![1, 1], &[1.0]),
        &t(vec![2, 1], &[0.0, ln3]),
        &t(vec![2, 1], &[1.0, 5.0]),
    )
    .unwrap();
    assert!((out.data()[0] - 4.0).abs() < 1e-9, "got {}", out.data()[0]);
    let same = ops::scaled_dot_attention(
        &t(vec![2, 2], &[0.3, -1.0, 2.0, 0.5]),
        &t(vec![3, 2], &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]),
        &t(vec![3, 1], &[1.0, 2.0, 6.0]),
    )
    .unwrap();
    assert!(same.data().iter().all(|&v| (v - 3.0).abs() < 1e-12));
}

/// Two heads of width one; every softmax reduces to {0, ln 3} or
/// {0, 2 ln 3} scores, evaluated by hand.
pub fn multi_head_hand_case() {
    let ln3 = 3f64.ln();
    let mut store = ParamStore::new();
    let col0 = || t(vec![2, 1], &[1.0, 0.0]);
    let col1 = || t(vec![2, 1], &[0.0, 1.0]);
    let p = AttentionParams::from_tensors(
        &mut store,
        "mha",
        vec![col0(), col1()],
        vec![col0(), col0()],
        vec![col1(), col0()],
        t(vec![2, 2], &[1.0, 0.0, 1.0, 2.0]),
    )
    .unwrap();
    let alpha = t(vec![2, 2], &[1.0, 0.0, 0.0, 2.0]);
    let beta = t(vec![2, 2], &[0.0, 1.0, ln3, 3.0]);
    let out = ops::multi_head_attention(&alpha, &beta, &store, &p).unwrap();
    let h0 = [0.25 * 1.0 + 0.75 * 3.0, 2.0];
    let h1 = [0.5 * ln3, 0.9 * ln3];
    let expected = [h0[0] + h1[0], 2.0 * h1[0], h0[1] + h1[1], 2.0 * h1[1]];
    for (a, e) in out.data().iter().zip(expected) {
        assert!((a - e).abs() < 1e-12, "{:?} vs {expected:?}", out.data());
    }
}

pub fn kernel_hand_cases() {
    let c = ops::matmul(
        &t(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]),
        &t(vec![2, 2], &[5.0, 6.0, 7.0, 8.0]),
    )
    .unwrap();
    assert_eq!(c.data(), [19.0, 22.0, 43.0, 50.0]);

    let cval = 0.7f64;
    let conv = ops::conv2d(
        &Tensor::full(vec![1, 4, 5], cval),
        &Tensor::full(vec![1, 1, 3, 3], 1.0),
        &Tensor::zeros(vec![1]),
    )
    .unwrap();
    let at = |i: usize, j: usize| conv.data()[i * 5 + j];
    assert!((at(1, 1) - 9.0 * cval).abs() < 1e-12 && (at(2, 3) - 9.0 * cval).abs() < 1e-12);
    assert!((at(0, 0) - 4.0 * cval).abs() < 1e-12 && (at(3, 4) - 4.0 * cval).abs() < 1e-12);
    assert!((at(0, 2) - 6.0 * cval).abs() < 1e-12 && (at(2, 0) - 6.0 * cval).abs() < 1e-12);

    let pooled = ops::maxpool2d(&t(vec![1, 2, 2], &[5.0, 5.0, 0.0, 0.0])).unwrap();
    assert_eq!(pooled.data(), [5.0]);
    let mut g = Graph::<f64>::detached();
    let x = g.input(
        t(vec![1, 2, 4], &[5.0, 5.0, 1.0, 3.0, 0.0, 0.0, 3.0, 2.0]),
        true,
    );
    let y = g.maxpool2(x).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(
        grads.input(x).unwrap(),
        [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]
    );

    let uniform = ops::softmax(&Tensor::full(vec![2, 5], 0.3f64), 1).unwrap();
    assert!(uniform.data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
    let wide = ops::softmax(&t(vec![1, 2], &[1000.0, 0.0]), 1).unwrap();
    assert!(wide.all_finite() && (wide.data()[0] - 1.0).abs() < 1e-12 && wide.data()[1] < 1e-300);
    let random = ops::softmax(&rand_tensor(&mut rng(3), vec![4, 9]), 1).unwrap();
    for r in 0..4 {
        assert!((random.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

pub fn analytic_loss_values() {
    let ln2 = 2f64.ln();
    assert!((ops::bce_loss(0.0f64, true) - ln2).abs() < 1e-9);
    assert!((ops::bce_loss(0.0f64, false) - ln2).abs() < 1e-9);
    let oracle = (1.0 + 2f64.exp()).ln();
    assert!((ops::bce_loss(2.0f64, false) - oracle).abs() < 1e-9);
    assert!((oracle - 2.1269).abs() < 1e-4);
    assert!((ops::ce_loss(&Tensor::full(vec![4], 0.25f64), 2).unwrap() - 4f64.ln()).abs() < 1e-9);
    let oracle = (1f64.exp() + 3.0).ln() - 1.0;
    assert!((ops::ce_loss(&t(vec![4], &[1.0, 0.0, 0.0, 0.0]), 0).unwrap() - oracle).abs() < 1e-9);
    assert!((oracle - 0.7437).abs() < 1e-4);
    assert!(
        ops::bce_loss(800.0f64, false).is_finite() && ops::bce_loss(-800.0f64, true).is_finite()
    );
}

/// Permuting the rows of the input permutes the output rows, bit for bit.
pub fn encoder_permutation_equivariance() {
    let mut r = rng(31);
    for _ in 0..5 {
        let mut store = ParamStore::new();
        let p = EncoderLayerParams::new(&mut store, "enc", 16, 4, 32, 0.1, 0, &mut r).unwrap();
        let n = r.gen_range(3..12);
        let x = rand_tensor(&mut r, vec![n, 16]);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let mut xp = Tensor::zeros(vec![n, 16]);
        for (i, &j) in perm.iter().enumerate() {
            xp.row_mut(i).copy_from_slice(x.row(j));
        }
        let y = ops::transformer_encoder_layer(&x, &store, &p).unwrap();
        let yp = ops::transformer_encoder_layer(&xp, &store, &p).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            let (a, b) = (yp.row(i), y.row(j));
            assert!(
                a.iter().zip(b).all(|(u, v)| u.to_bits() == v.to_bits()),
                "row {i} differs"
            );
        }
    }
}

pub fn adam_hand_cases() {
    let mut store = ParamStore::new();
    let id = store.add("w", t(vec![3], &[1.0, -2.0, 0.5]));
    let cfg = AdamConfig {
        lr: 0.01,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&store, cfg);
    let grad = [0.3, -4.0, 1e-3];
    store.get_mut(id).accumulate_grad(&grad, 1.0);
    adam_step(&mut store, &mut state);
    for ((w, w0), g) in store.get(id).data().iter().zip([1.0, -2.0, 0.5]).zip(grad) {
        assert!((w - (w0 - 0.01 * f64::signum(g))).abs() < 1e-6);
    }

    let mut store = ParamStore::new();
    let id = store.add("w", t(vec![1], &[1.0]));
    let mut state = AdamState::new(
        &store,
        AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        },
    );
    let mut losses = vec![];
    for _ in 0..2 {
        let w = store.get(id).data()[0];
        losses.push(w * w);
        store.zero_grads();
        store.get_mut(id).accumulate_grad(&[2.0 * w], 1.0);
        adam_step(&mut store, &mut state);
    }
    let w = store.get(id).data()[0];
    assert!(w * w < losses[1] && losses[1] < losses[0]);
}

pub fn run_all() {
    every_op_passes_grad_check();
    attention_hand_case();
    multi_head_hand_case();
    kernel_hand_cases();
    analytic_loss_values();
    encoder_permutation_equivariance();
    adam_hand_cases();
}

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::Tensor;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so relu kinks are never crossed by the
/// finite-difference step.
fn random_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random::<bool>() { v } else { -v }
    })
}

/// Central-difference check of every input of `build`, which maps variable
/// leaves to an arbitrary-shape output; the scalar loss is a fixed random
/// projection of that output.
fn check_gradients<F>(seed: u64, inputs: &[Tensor], build: F)
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let loss_of = |vals: &[Tensor], proj: Option<&Tensor>| -> (f64, Graph, Vec<NodeId>, NodeId) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| g.variable(t.clone()).unwrap()).collect();
        let out = build(&mut g, &ids);
        let root = match proj {
            Some(p) => {
                let p = g.constant(p.clone()).unwrap();
                let m = g.mul(out, p).unwrap();
                g.sum(m).unwrap()
            }
            None => out,
        };
        (g.value(root).item().unwrap(), g, ids, root)
    };
    let probe = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone()).unwrap()).collect();
        let out = build(&mut g, &ids);
        g.value(out).clone()
    };
    let proj = (probe.rank() > 0).then(|| random(&mut rng, probe.shape()));
    let (_, g, ids, root) = loss_of(inputs, proj.as_ref());
    let grads = g.backward(root).unwrap();
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(*id).unwrap();
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = (loss_of(&plus, proj.as_ref()).0 - loss_of(&minus, proj.as_ref()).0) / (2.0 * H);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel <= 1e-4, "seed {seed} input {k}[{i}]: analytic {a} vs numeric {numeric} (rel {rel})");
        }
    }
}

const SEEDS: u64 = 10;

#[test]
fn conv1d_identity_kernel() {
    let x = Tensor::from_fn([6, 1], |i| (i as f64).sin());
    let mut g = Graph::new();
    let xi = g.constant(x.clone()).unwrap();
    let k = g.constant(Tensor::new([3, 1, 1], vec![0.0, 1.0, 0.0]).unwrap()).unwrap();
    for dil in 1..4 {
        let y = g.conv1d(xi, k, None, dil, ConvMode::Full).unwrap();
        assert_eq!(g.value(y), &x);
    }
}

#[test]
fn conv1d_dilated_sum() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new([5, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap()).unwrap();
    let k = g.constant(Tensor::full([3, 1, 1], 1.0)).unwrap();
    let y = g.conv1d(x, k, None, 2, ConvMode::Full).unwrap();
    // taps at t-2, t, t+2 with zero padding
    assert_eq!(g.value(y).data(), &[1.0 + 3.0, 2.0 + 4.0, 1.0 + 3.0 + 5.0, 2.0 + 4.0, 3.0 + 5.0]);
}

#[test]
fn depthwise_delta_then_pointwise_is_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[7, 4]);
    let p = random(&mut rng, &[1, 4, 3]);
    let mut delta = Tensor::zeros([5, 4]);
    for c in 0..4 {
        delta.data_mut()[2 * 4 + c] = 1.0;
    }
    let mut g = Graph::new();
    let xi = g.constant(x.clone()).unwrap();
    let di = g.constant(delta).unwrap();
    let pi = g.constant(p.clone()).unwrap();
    let d = g.conv1d(xi, di, None, 3, ConvMode::Depthwise).unwrap();
    let y = g.conv1d(d, pi, None, 1, ConvMode::Pointwise).unwrap();
    for t in 0..7 {
        for o in 0..3 {
            let expected: f64 = (0..4).map(|i| x.data()[t * 4 + i] * p.data()[i * 3 + o]).sum();
            assert!((g.value(y).data()[t * 3 + o] - expected).abs() < 1e-14);
        }
    }
}

#[test]
fn conv1d_rejects_bad_arguments() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros([5, 2])).unwrap();
    let even = g.constant(Tensor::zeros([2, 2, 2])).unwrap();
    let wrong = g.constant(Tensor::zeros([3, 3, 2])).unwrap();
    let ok = g.constant(Tensor::zeros([3, 2, 2])).unwrap();
    let wide_pointwise = g.constant(Tensor::zeros([3, 2, 2])).unwrap();
    assert!(g.conv1d(x, even, None, 1, ConvMode::Full).is_err());
    assert!(g.conv1d(x, wrong, None, 1, ConvMode::Full).is_err());
    assert!(g.conv1d(x, ok, None, 0, ConvMode::Full).is_err());
    assert!(g.conv1d(x, wide_pointwise, None, 1, ConvMode::Pointwise).is_err());
    let dw = g.constant(Tensor::zeros([3, 3])).unwrap();
    assert!(g.conv1d(x, dw, None, 1, ConvMode::Depthwise).is_err());
}

#[test]
fn conv1d_is_linear_in_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (a, b) = (0.7, -1.3);
    let x = random(&mut rng, &[2, 9, 3]);
    let y = random(&mut rng, &[2, 9, 3]);
    let k = random(&mut rng, &[3, 3, 4]);
    let conv = |inp: &Tensor| {
        let mut g = Graph::new();
        let i = g.constant(inp.clone()).unwrap();
        let kk = g.constant(k.clone()).unwrap();
        let o = g.conv1d(i, kk, None, 2, ConvMode::Full).unwrap();
        g.value(o).clone()
    };
    let combo = Tensor::from_fn([2, 9, 3], |i| a * x.data()[i] + b * y.data()[i]);
    let lhs = conv(&combo);
    let (cx, cy) = (conv(&x), conv(&y));
    let rhs = Tensor::from_fn([2, 9, 4], |i| a * cx.data()[i] + b * cy.data()[i]);
    assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
}

#[test]
fn conv1d_batch_does_not_leak_across_utterances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[2, 6, 2]);
    let k = random(&mut rng, &[5, 2, 3]);
    let mut g = Graph::new();
    let xi = g.constant(x.clone()).unwrap();
    let ki = g.constant(k.clone()).unwrap();
    let batched = g.conv1d(xi, ki, None, 1, ConvMode::Full).unwrap();
    for b in 0..2 {
        let single = Tensor::new([6, 2], x.data()[b * 12..(b + 1) * 12].to_vec()).unwrap();
        let si = g.constant(single).unwrap();
        let y = g.conv1d(si, ki, None, 1, ConvMode::Full).unwrap();
        assert_eq!(g.value(y).data(), &g.value(batched).data()[b * 18..(b + 1) * 18]);
    }
}

#[test]
fn affine_identity_and_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[4, 3]);
    let mut g = Graph::new();
    let xi = g.constant(x.clone()).unwrap();
    let eye = g.constant(Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 })).unwrap();
    let zero_b = g.constant(Tensor::zeros([3])).unwrap();
    let y = g.affine(xi, eye, Some(zero_b)).unwrap();
    assert_eq!(g.value(y), &x);
    let zero_w = g.constant(Tensor::zeros([2, 3])).unwrap();
    let c = g.constant(Tensor::new([2], vec![1.5, -2.0]).unwrap()).unwrap();
    let y = g.affine(xi, zero_w, Some(c)).unwrap();
    for r in 0..4 {
        assert_eq!(g.value(y).row(r), &[1.5, -2.0]);
    }
}

#[test]
fn affine_matches_naive_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, &[5, 4]);
    let w = random(&mut rng, &[3, 4]);
    let mut g = Graph::new();
    let xi = g.constant(x.clone()).unwrap();
    let wi = g.constant(w.clone()).unwrap();
    let y = g.affine(xi, wi, None).unwrap();
    for r in 0..5 {
        for o in 0..3 {
            let mut acc = 0.0;
            for i in 0..4 {
                acc += w.data()[o * 4 + i] * x.data()[r * 4 + i];
            }
            assert!((g.value(y).data()[r * 3 + o] - acc).abs() < 1e-14);
        }
    }
    let bad = g.constant(Tensor::zeros([3, 5])).unwrap();
    assert!(g.affine(xi, bad, None).is_err());
}

#[test]
fn activations() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap()).unwrap();
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = g.constant(Tensor::scalar(0.0)).unwrap();
    let t = g.tanh(z).unwrap();
    assert_eq!(g.value(t).item().unwrap(), 0.0);
    let big = g.constant(Tensor::new([2], vec![-40.0, 40.0]).unwrap()).unwrap();
    let t = g.tanh(big).unwrap();
    assert!(g.value(t).data().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn tanh_derivative_matches_formula() {
    for x0 in [-2.0, -0.3, 0.0, 0.8, 1.7] {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(x0)).unwrap();
        let y = g.tanh(x).unwrap();
        let grads = g.backward(y).unwrap();
        let expected = 1.0 - x0.tanh() * x0.tanh();
        assert!((grads.wrt(x).unwrap().item().unwrap() - expected).abs() < 1e-15);
    }
}

#[test]
fn batchnorm_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full([6, 2], 3.0)).unwrap();
    let one = g.constant(Tensor::full([2], 1.0)).unwrap();
    let zero = g.constant(Tensor::zeros([2])).unwrap();
    let y = g.batchnorm(x, one, zero, BatchNormMode::Training, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = g.constant(random(&mut rng, &[8, 2])).unwrap();
    let c = g.constant(Tensor::full([2], 0.25)).unwrap();
    let y = g.batchnorm(x, zero, c, BatchNormMode::Training, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.25));

    let empty = g.constant(Tensor::zeros([0, 2])).unwrap();
    assert!(g.batchnorm(empty, one, zero, BatchNormMode::Training, 1e-5).is_err());
    assert!(g.batchnorm(x, one, zero, BatchNormMode::Training, 0.0).is_err());
}

#[test]
fn batchnorm_training_moments() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // spread large enough that eps/var stays below 1e-6
        let x = Tensor::from_fn([50, 3], |i| rng.random_range(-20.0..20.0) + (i % 3) as f64 * 10.0);
        let mut g = Graph::new();
        let xi = g.constant(x).unwrap();
        let one = g.constant(Tensor::full([3], 1.0)).unwrap();
        let zero = g.constant(Tensor::zeros([3])).unwrap();
        let y = g.batchnorm(xi, one, zero, BatchNormMode::Training, 1e-5).unwrap();
        let out = g.value(y);
        for c in 0..3 {
            let col: Vec<f64> = (0..50).map(|r| out.data()[r * 3 + c]).collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 50.0;
            assert!(mean.abs() <= 1e-10, "mean {mean}");
            assert!((var - 1.0).abs() <= 1e-6, "var {var}");
        }
    }
}

#[test]
fn batchnorm_inference_uses_running_stats_and_ema() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new([2, 1], vec![3.0, 5.0]).unwrap()).unwrap();
    let one = g.constant(Tensor::full([1], 1.0)).unwrap();
    let zero = g.constant(Tensor::zeros([1])).unwrap();
    let y = g
        .batchnorm(x, one, zero, BatchNormMode::Inference { mean: &[1.0], var: &[4.0 - 1e-5] }, 1e-5)
        .unwrap();
    assert!((g.value(y).data()[0] - 1.0).abs() < 1e-12);
    assert!((g.value(y).data()[1] - 2.0).abs() < 1e-12);
    assert!(g.batch_stats(y).is_none());

    let t = g.batchnorm(x, one, zero, BatchNormMode::Training, 1e-5).unwrap();
    let (m, v) = g.batch_stats(t).unwrap();
    assert_eq!((m[0], v[0]), (4.0, 1.0));
    let mut running = [0.0];
    ema_update(&mut running, m, 0.95);
    assert!((running[0] - 0.2).abs() < 1e-15);
}

#[test]
fn softmax_cross_entropy_examples() {
    for n in [2usize, 5, 17] {
        let mut g = Graph::new();
        let z = g.constant(Tensor::full([n], 0.3)).unwrap();
        let l = g.softmax_cross_entropy(z, &[n - 1]).unwrap();
        assert!((g.value(l).item().unwrap() - (n as f64).ln()).abs() < 1e-14);
    }
    let mut g = Graph::new();
    let z = g.constant(Tensor::new([2], vec![1000.0, -1000.0]).unwrap()).unwrap();
    let l = g.softmax_cross_entropy(z, &[0]).unwrap();
    let v = g.value(l).item().unwrap();
    assert!(v.is_finite() && v.abs() < 1e-300);
    assert!(matches!(
        g.softmax_cross_entropy(z, &[2]),
        Err(crate::Error::LabelOutOfRange { label: 2, classes: 2 })
    ));
}

/// Double-double style oracle: log-sum-exp evaluated with compensated
/// summation on shifted values.
#[test]
fn softmax_cross_entropy_matches_compensated_oracle() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..7).map(|_| rng.random_range(-20.0..20.0)).collect();
        let label = (seed % 7) as usize;
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for v in &z {
            let y = (v - max).exp() - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        let oracle = max + sum.ln() - z[label];
        let mut g = Graph::new();
        let zi = g.constant(Tensor::new([7], z).unwrap()).unwrap();
        let l = g.softmax_cross_entropy(zi, &[label]).unwrap();
        assert!((g.value(l).item().unwrap() - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
    }
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::new();
    let x = g.variable(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, -4.0, 1.0]);

    assert!(g.backward(sq).is_err());
}

#[test]
fn shared_subexpression_equals_unrolled_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let xv = random(&mut rng, &[4, 3]);
    let wv = random(&mut rng, &[3, 3]);
    // shared: h = tanh(xW); L = sum(h * h + h)
    let mut g = Graph::new();
    let x = g.variable(xv.clone()).unwrap();
    let w = g.variable(wv.clone()).unwrap();
    let a = g.affine(x, w, None).unwrap();
    let h = g.tanh(a).unwrap();
    let hh = g.mul(h, h).unwrap();
    let s = g.add(hh, h).unwrap();
    let l = g.sum(s).unwrap();
    let shared = g.backward(l).unwrap();
    // unrolled: three independent copies of h
    let mut u = Graph::new();
    let x2 = u.variable(xv).unwrap();
    let w2 = u.variable(wv).unwrap();
    let copies: Vec<NodeId> = (0..3)
        .map(|_| {
            let a = u.affine(x2, w2, None).unwrap();
            u.tanh(a).unwrap()
        })
        .collect();
    let hh = u.mul(copies[0], copies[1]).unwrap();
    let s = u.add(hh, copies[2]).unwrap();
    let l2 = u.sum(s).unwrap();
    let unrolled = u.backward(l2).unwrap();
    assert!(shared.wrt(x).unwrap().max_abs_diff(&unrolled.wrt(x2).unwrap()).unwrap() < 1e-14);
    assert!(shared.wrt(w).unwrap().max_abs_diff(&unrolled.wrt(w2).unwrap()).unwrap() < 1e-14);
}

#[test]
fn parameters_accumulate_and_constants_are_skipped() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::new([1, 2], vec![0.5, -1.0]).unwrap(), true).unwrap();
    let frozen = store.add("frozen", Tensor::full([2], 1.0), false).unwrap();
    let mut g = Graph::new();
    let x = g.constant(Tensor::new([1, 2], vec![2.0, 3.0]).unwrap()).unwrap();
    let wi = g.param(&store, w).unwrap();
    assert_eq!(g.param(&store, w).unwrap(), wi);
    let y1 = g.affine(x, wi, None).unwrap();
    let y2 = g.affine(x, wi, None).unwrap();
    let s = g.add(y1, y2).unwrap();
    let _fi = g.param(&store, frozen).unwrap();
    let r = g.reshape(s, &[]).unwrap();
    let grads = g.backward(r).unwrap();
    assert_eq!(grads.param(w).unwrap(), &[4.0, 6.0]);
    assert!(grads.param(frozen).is_none());
    assert!(grads.wrt(x).is_none());
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut g = Graph::new();
    assert!(g.constant(Tensor::new([1], vec![f64::NAN]).unwrap()).is_err());
    let x = g.constant(Tensor::new([1, 1], vec![1e200]).unwrap()).unwrap();
    let w = g.constant(Tensor::new([1, 1], vec![1e200]).unwrap()).unwrap();
    assert_eq!(g.affine(x, w, None), Err(crate::Error::NonFinite("affine")));
}

#[test]
fn pooling_examples() {
    let mut g = Graph::new();
    let frame = [0.3, -1.7, 2.9];
    let h = g.constant(Tensor::from_fn([5, 3], |i| frame[i % 3])).unwrap();
    let c = g.attentive_pool(h, None).unwrap();
    for k in 0..3 {
        assert!((g.value(c).data()[k] - frame[k]).abs() < 1e-15);
        let sigma = g.value(c).data()[3 + k];
        assert!((0.0..1e-12).contains(&sigma));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let hv = random(&mut rng, &[6, 4]);
    let h = g.constant(hv).unwrap();
    let e = g.constant(Tensor::full([6], 2.5)).unwrap();
    let weighted = g.attentive_pool(h, Some(e)).unwrap();
    let plain = g.attentive_pool(h, None).unwrap();
    assert_eq!(g.value(weighted), g.value(plain));
    assert!(g.pooling_weights(weighted).unwrap().iter().all(|&a| a == 1.0 / 6.0));

    let empty = g.constant(Tensor::zeros([0, 4])).unwrap();
    assert!(g.attentive_pool(empty, None).is_err());
}

#[test]
fn pooling_matches_naive_weighted_moments() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, d) = (9, 4);
        let hv = random(&mut rng, &[t, d]);
        let ev = random(&mut rng, &[t]);
        let mut g = Graph::new();
        let h = g.constant(hv.clone()).unwrap();
        let e = g.constant(ev.clone()).unwrap();
        let c = g.attentive_pool(h, Some(e)).unwrap();
        let z: f64 = ev.data().iter().map(|v| v.exp()).sum();
        let alpha: Vec<f64> = ev.data().iter().map(|v| v.exp() / z).collect();
        for k in 0..d {
            let mut mu = 0.0;
            let mut m2 = 0.0;
            for ti in 0..t {
                mu += alpha[ti] * hv.data()[ti * d + k];
                m2 += alpha[ti] * hv.data()[ti * d + k] * hv.data()[ti * d + k];
            }
            let sigma = (m2 - mu * mu).max(0.0).sqrt();
            assert!((g.value(c).data()[k] - mu).abs() < 1e-12);
            assert!((g.value(c).data()[d + k] - sigma).abs() < 1e-12);
        }
    }
}

#[test]
fn cosine_scores_examples() {
    let mut g = Graph::new();
    let h = g.constant(Tensor::new([2, 2], vec![2.0, 0.0, 0.0, 3.0]).unwrap()).unwrap();
    let r = g.constant(Tensor::new([2], vec![5.0, 0.0]).unwrap()).unwrap();
    let e = g.cosine_scores(h, r).unwrap();
    assert_eq!(g.value(e).data(), &[1.0, 0.0]);
    let zero = g.constant(Tensor::zeros([2])).unwrap();
    assert_eq!(g.cosine_scores(h, zero), Err(crate::Error::ZeroNorm("cosine_scores")));
}

// ---- finite-difference suite, >= 10 seeds per op ----

#[test]
fn gradcheck_conv1d_all_modes() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, 7, 3]);
        let full = random(&mut rng, &[3, 3, 2]);
        let bias = random(&mut rng, &[2]);
        check_gradients(seed, &[x.clone(), full, bias], |g, v| {
            g.conv1d(v[0], v[1], Some(v[2]), 2, ConvMode::Full).unwrap()
        });
        let dw = random(&mut rng, &[5, 3]);
        check_gradients(seed, &[x.clone(), dw], |g, v| {
            g.conv1d(v[0], v[1], None, 1 + (seed as usize % 3), ConvMode::Depthwise).unwrap()
        });
        let pw = random(&mut rng, &[1, 3, 4]);
        let pb = random(&mut rng, &[4]);
        check_gradients(seed, &[x, pw, pb], |g, v| {
            g.conv1d(v[0], v[1], Some(v[2]), 1, ConvMode::Pointwise).unwrap()
        });
    }
}

#[test]
fn gradcheck_affine() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, 3, 4]);
        let w = random(&mut rng, &[5, 4]);
        let b = random(&mut rng, &[5]);
        check_gradients(seed, &[x, w, b], |g, v| g.affine(v[0], v[1], Some(v[2])).unwrap());
    }
}

#[test]
fn gradcheck_activations() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_off_zero(&mut rng, &[4, 3]);
        check_gradients(seed, &[x.clone()], |g, v| g.relu(v[0]).unwrap());
        check_gradients(seed, &[x], |g, v| g.tanh(v[0]).unwrap());
    }
}

#[test]
fn gradcheck_batchnorm() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, 5, 3]);
        let gamma = random(&mut rng, &[3]);
        let beta = random(&mut rng, &[3]);
        check_gradients(seed, &[x.clone(), gamma.clone(), beta.clone()], |g, v| {
            g.batchnorm(v[0], v[1], v[2], BatchNormMode::Training, 1e-5).unwrap()
        });
        let mean = [0.1, -0.2, 0.3];
        let var = [0.5, 1.5, 2.0];
        check_gradients(seed, &[x, gamma, beta], |g, v| {
            g.batchnorm(v[0], v[1], v[2], BatchNormMode::Inference { mean: &mean, var: &var }, 1e-5)
                .unwrap()
        });
    }
}

#[test]
fn gradcheck_softmax_cross_entropy() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Tensor::from_fn([3, 5], |_| rng.random_range(-3.0..3.0));
        let labels = [seed as usize % 5, (seed as usize + 2) % 5, 4];
        check_gradients(seed, &[z], |g, v| g.softmax_cross_entropy(v[0], &labels).unwrap());
    }
}

#[test]
fn gradcheck_shape_ops() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[2, 3, 2]);
        let b = random(&mut rng, &[2, 3, 3]);
        check_gradients(seed, &[a.clone(), b], |g, v| g.concat_last(&[v[0], v[1], v[0]]).unwrap());
        let stats = random(&mut rng, &[2, 3, 4]);
        let keys = random(&mut rng, &[2, 4]);
        check_gradients(seed, &[stats, keys], |g, v| g.concat_keys(v[0], v[1]).unwrap());
        let q = random(&mut rng, &[2, 5, 4]);
        let k = random(&mut rng, &[2, 3, 4]);
        check_gradients(seed, &[q, k], |g, v| g.bmm_nt(v[0], v[1]).unwrap());
        let bias = random(&mut rng, &[2]);
        check_gradients(seed, &[a.clone(), bias], |g, v| g.add_bias(v[0], v[1]).unwrap());
        let c = random(&mut rng, &[2, 3, 2]);
        check_gradients(seed, &[a.clone(), c], |g, v| {
            let m = g.mul(v[0], v[1]).unwrap();
            let s = g.add(m, v[0]).unwrap();
            g.reshape(s, &[6, 2]).unwrap()
        });
        let mask: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.25 }).collect();
        check_gradients(seed, &[a], move |g, v| g.mask(v[0], mask.clone()).unwrap());
    }
}

#[test]
fn gradcheck_cosine_scores() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random(&mut rng, &[2, 4, 3]);
        let r = random(&mut rng, &[2, 3]);
        check_gradients(seed, &[h, r], |g, v| g.cosine_scores(v[0], v[1]).unwrap());
    }
}

#[test]
fn gradcheck_attentive_pool() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random(&mut rng, &[2, 6, 3]);
        let e = random(&mut rng, &[2, 6]);
        check_gradients(seed, &[h.clone(), e], |g, v| g.attentive_pool(v[0], Some(v[1])).unwrap());
        check_gradients(seed, &[h], |g, v| g.attentive_pool(v[0], None).unwrap());
    }
}

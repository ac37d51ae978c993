use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::testing::check_gradients;
use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], r: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct sum with an explicitly zero-padded input; `x` is `[time, cin]`.
fn naive_causal_conv(x: &Tensor, w: &Tensor, b: &[f64], dilation: usize) -> Vec<f64> {
    let (time, cin) = (x.shape()[0], x.shape()[1]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k - 1) * dilation;
    let mut padded = vec![0.0; (time + pad) * cin];
    padded[pad * cin..].copy_from_slice(x.data());
    let mut out = vec![0.0; time * cout];
    for t in 0..time {
        for o in 0..cout {
            let mut acc = b[o];
            for c in 0..cin {
                for j in 0..k {
                    acc += w.data()[(o * cin + c) * k + j] * padded[(t + j * dilation) * cin + c];
                }
            }
            out[t * cout + o] = acc;
        }
    }
    out
}

fn conv_forward(x: Tensor, w: Tensor, b: Tensor, dilation: usize) -> Tensor {
    let mut g = Graph::new();
    let (x, w, b) = (g.input(x), g.input(w), g.input(b));
    let y = g.conv1d_causal(x, w, b, dilation).unwrap();
    g.value(y).clone()
}

#[test]
fn conv_identity_kernel() {
    let x = Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
    let w = Tensor::new(&[1, 1, 1], vec![1.0]).unwrap();
    let y = conv_forward(x, w, Tensor::from_vec(vec![0.0]), 1);
    assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn conv_zero_weights_gives_bias() {
    let x = random(&[4, 2], &mut rng(1));
    let w = Tensor::zeros(&[1, 2, 3]);
    let y = conv_forward(x, w, Tensor::from_vec(vec![0.5]), 2);
    assert_eq!(y.data(), &[0.5; 4]);
}

#[test]
fn conv_matches_naive_oracle() {
    let mut r = rng(2);
    let x = random(&[8, 2], &mut r);
    let w = random(&[3, 2, 3], &mut r);
    let b = random(&[3], &mut r);
    let expected = naive_causal_conv(&x, &w, b.data(), 2);
    let y = conv_forward(x, w, b, 2);
    assert_eq!(y.shape(), &[8, 3]);
    for (a, e) in y.data().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn conv_batched_matches_per_sample() {
    let mut r = rng(3);
    let x = random(&[3, 10, 2], &mut r);
    let w = random(&[4, 2, 3], &mut r);
    let b = random(&[4], &mut r);
    let y = conv_forward(x.clone(), w.clone(), b.clone(), 4);
    for s in 0..3 {
        let xs = Tensor::new(&[10, 2], x.data()[s * 20..(s + 1) * 20].to_vec()).unwrap();
        let expected = naive_causal_conv(&xs, &w, b.data(), 4);
        for (a, e) in y.data()[s * 40..(s + 1) * 40].iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[5, 3]));
    let w = g.input(Tensor::zeros(&[2, 2, 3]));
    let b = g.input(Tensor::zeros(&[2]));
    assert!(matches!(g.conv1d_causal(x, w, b, 1), Err(NnError::Config(_))));
}

#[test]
fn conv_stack_is_causal() {
    let mut r = rng(4);
    let layers: Vec<(Tensor, Tensor, usize)> = vec![
        (random(&[4, 2, 3], &mut r), random(&[4], &mut r), 1),
        (random(&[4, 4, 3], &mut r), random(&[4], &mut r), 2),
        (random(&[3, 4, 2], &mut r), random(&[3], &mut r), 4),
    ];
    let run = |x: &Tensor| {
        let mut g = Graph::new();
        let mut h = g.input(x.clone());
        for (w, b, d) in &layers {
            let (w, b) = (g.input(w.clone()), g.input(b.clone()));
            h = g.conv1d_causal(h, w, b, *d).unwrap();
            h = g.relu(h);
        }
        g.value(h).clone()
    };
    let x = random(&[20, 2], &mut r);
    let base = run(&x);
    for t in 0..20 {
        let mut xp = x.clone();
        xp.data_mut()[t * 2] += 1.5;
        let y = run(&xp);
        assert_eq!(&y.data()[..t * 3], &base.data()[..t * 3], "perturbation at {t}");
    }
}

fn linear_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor {
    let mut g = Graph::new();
    let (x, w, b) = (g.input(x), g.input(w), g.input(b));
    let y = g.linear(x, w, Some(b)).unwrap();
    g.value(y).clone()
}

#[test]
fn linear_identity_and_hand_values() {
    let x = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    assert_eq!(linear_forward(x.clone(), eye, Tensor::zeros(&[3])), x);

    let y = linear_forward(
        Tensor::from_vec(vec![2.0, 3.0]),
        Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap(),
        Tensor::from_vec(vec![1.0]),
    );
    assert_eq!(y.data(), &[6.0]);
}

#[test]
fn linear_matches_triple_loop() {
    let mut r = rng(5);
    let x = random(&[4, 3], &mut r);
    let w = random(&[5, 3], &mut r);
    let b = random(&[5], &mut r);
    let y = linear_forward(x.clone(), w.clone(), b.clone());
    for i in 0..4 {
        for o in 0..5 {
            let mut acc = b.data()[o];
            for k in 0..3 {
                acc += x.data()[i * 3 + k] * w.data()[o * 3 + k];
            }
            assert!((y.data()[i * 5 + o] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_rejects_extent_mismatch() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[2, 4]));
    let w = g.input(Tensor::zeros(&[3, 5]));
    assert!(g.linear(x, w, None).is_err());
}

#[test]
fn activations() {
    let mut g = Graph::new();
    let x = g.input(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    assert_eq!(activate(Activation::Gelu, 0.0), 0.0);

    let mut params = ParameterSet::new();
    let w = params.add("w", Tensor::from_vec(vec![2.0, -1.0])).unwrap();
    let mut g = Graph::new();
    let wv = g.param(&params, w);
    let y = g.relu(wv);
    let l = g.sum(y);
    g.backward(l, &mut params).unwrap();
    assert_eq!(params.grad(w).data(), &[1.0, 0.0]);
}

#[test]
fn backward_square_and_constant() {
    let mut params = ParameterSet::new();
    let w = params.add("w", Tensor::scalar(3.0)).unwrap();
    let mut g = Graph::new();
    let wv = g.param(&params, w);
    let sq = g.square(wv);
    g.backward(sq, &mut params).unwrap();
    assert_eq!(params.grad(w).data(), &[6.0]);

    params.zero_grad();
    let mut g = Graph::new();
    let _ = g.param(&params, w);
    let c = g.input(Tensor::scalar(4.0));
    let l = g.scale(c, 2.0);
    g.backward(l, &mut params).unwrap();
    assert_eq!(params.grad(w).data(), &[0.0]);
}

#[test]
fn backward_requires_zeroing_and_scalar_loss() {
    let mut params = ParameterSet::new();
    let w = params.add("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
    let mut g = Graph::new();
    let wv = g.param(&params, w);
    assert!(matches!(g.backward(wv, &mut params), Err(NnError::Usage(_))));
    let l = g.sum(wv);
    g.backward(l, &mut params).unwrap();
    assert!(matches!(g.backward(l, &mut params), Err(NnError::Usage(_))));
    params.zero_grad();
    g.backward(l, &mut params).unwrap();
}

#[test]
fn backward_reports_non_finite() {
    let mut params = ParameterSet::new();
    let w = params.add("w", Tensor::scalar(f64::INFINITY)).unwrap();
    let mut g = Graph::new();
    let wv = g.param(&params, w);
    let l = g.square(wv);
    assert!(matches!(g.backward(l, &mut params), Err(NnError::NonFinite(_))));
}

#[test]
fn gradients_match_finite_differences_per_layer() {
    let mut r = rng(6);
    let x = random(&[2, 9, 3], &mut r);
    let target = random(&[2, 2], &mut r);
    let mut params = ParameterSet::new();
    let cw = params.add_uniform("conv.w", &[4, 3, 3], 9, &mut r).unwrap();
    let cb = params.add_uniform("conv.b", &[4], 9, &mut r).unwrap();
    let lw = params.add_uniform("lin.w", &[2, 4], 4, &mut r).unwrap();
    let lb = params.add_uniform("lin.b", &[2], 4, &mut r).unwrap();
    let mask: Vec<f64> = (0..18).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 }).collect();

    for kind in [Activation::Relu, Activation::Gelu] {
        let report = check_gradients(&mut params, 1e-5, |g, p| {
            let xv = g.input(x.clone());
            let (w, b) = (g.param(p, cw), g.param(p, cb));
            let h = g.conv1d_causal(xv, w, b, 2)?;
            let h = g.mask_time(h, mask.clone())?;
            let h = g.activation(h, kind);
            let h = g.slice_time(h, 1, 7)?;
            let h = g.last_step(h)?;
            let (w, b) = (g.param(p, lw), g.param(p, lb));
            let y = g.linear(h, w, Some(b))?;
            g.mse(y, &target)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{kind:?}: {report:?}");
    }
}

#[test]
fn parameter_count_is_sum_of_shapes() {
    let mut r = rng(7);
    let mut params = ParameterSet::new();
    params.add_uniform("a", &[64, 3, 3], 9, &mut r).unwrap();
    params.add_uniform("b", &[64], 9, &mut r).unwrap();
    params.add_uniform("c", &[1, 128], 128, &mut r).unwrap();
    assert_eq!(params.count(), 64 * 3 * 3 + 64 + 128);
    assert!(params.add("a", Tensor::scalar(0.0)).is_err());
}

#[test]
fn adam_zero_gradient_is_noop() {
    let mut params = ParameterSet::new();
    let w = params.add("w", Tensor::from_vec(vec![1.0, -2.0])).unwrap();
    let mut adam = Adam::new(&params);
    adam.step(&mut params, 0.1).unwrap();
    assert_eq!(params.value(w).data(), &[1.0, -2.0]);
    assert!(adam.first_moment()[0].data().iter().all(|&v| v == 0.0));
    assert!(adam.second_moment()[0].data().iter().all(|&v| v == 0.0));
    assert_eq!(adam.steps(), 1);
}

#[test]
fn adam_first_step_moves_by_lr() {
    for g in [0.3, -2.5] {
        let mut params = ParameterSet::new();
        let w = params.add("w", Tensor::scalar(1.0)).unwrap();
        params.grad_mut(w).data_mut()[0] = g;
        let mut adam = Adam::new(&params);
        adam.step(&mut params, 0.01).unwrap();
        let delta = params.value(w).data()[0] - 1.0;
        let expected = -0.01 * g / (g.abs() + 1e-8);
        assert!((delta - expected).abs() < 1e-15);
        assert!((delta + 0.01 * g.signum()).abs() < 1e-9);
    }
}

#[test]
fn adam_trajectory_matches_scalar_recurrence() {
    let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
    let mut params = ParameterSet::new();
    let w = params.add("w", Tensor::scalar(1.5)).unwrap();
    let mut adam = Adam::new(&params);

    let (mut x, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
    for t in 1..=10 {
        let g = 2.0 * x;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        x -= lr * mh / (vh.sqrt() + eps);

        params.zero_grad();
        let mut gr = Graph::new();
        let wv = gr.param(&params, w);
        let l = gr.square(wv);
        gr.backward(l, &mut params).unwrap();
        adam.step(&mut params, lr).unwrap();
        assert!((params.value(w).data()[0] - x).abs() < 1e-10, "step {t}");
    }
}

#[test]
fn adam_rejects_shape_drift() {
    let mut params = ParameterSet::new();
    params.add("w", Tensor::scalar(1.0)).unwrap();
    let mut adam = Adam::new(&params);
    params.add("extra", Tensor::scalar(1.0)).unwrap();
    assert!(matches!(adam.step(&mut params, 0.1), Err(NnError::Config(_))));
}

#[test]
fn cosine_schedule_endpoints() {
    let s = CosineSchedule {
        lr0: 1e-3,
        eta_min: 1e-5,
        t_max: 50,
    };
    assert_eq!(s.lr(0), 1e-3);
    assert!((s.lr(50) - 1e-5).abs() < 1e-18);
    assert!((s.lr(25) - (1e-3 + 1e-5) / 2.0).abs() < 1e-15);
    assert_eq!(s.lr(80), s.lr(50));
    for step in 0..=50 {
        let lr = s.lr(step);
        assert!((1e-5..=1e-3).contains(&lr));
    }
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut r = rng(11);
        let mut params = ParameterSet::new();
        let w = params.add_uniform("w", &[3, 2, 3], 6, &mut r).unwrap();
        let b = params.add_uniform("b", &[3], 6, &mut r).unwrap();
        let x = random(&[2, 6, 2], &mut r);
        let target = random(&[2, 6, 3], &mut r);
        let mut adam = Adam::new(&params);
        for _ in 0..5 {
            params.zero_grad();
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let (wv, bv) = (g.param(&params, w), g.param(&params, b));
            let y = g.conv1d_causal(xv, wv, bv, 1).unwrap();
            let l = g.mse(y, &target).unwrap();
            g.backward(l, &mut params).unwrap();
            adam.step(&mut params, 0.01).unwrap();
        }
        params.snapshot()
    };
    assert_eq!(run(), run());
}

#[test]
fn receptive_field_of_tcn() {
    assert_eq!(receptive_field([(3, 1), (3, 2), (3, 4)]), 15);
    assert_eq!(receptive_field([(1, 1)]), 1);
}

proptest! {
    #[test]
    fn checkpoint_roundtrip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), split in 0usize..40) {
        let split = split.min(values.len());
        let mut params = ParameterSet::new();
        params.add("first", Tensor::from_vec(values[..split].to_vec())).unwrap();
        params.add("second", Tensor::new(&[1, values.len() - split], values[split..].to_vec()).unwrap()).unwrap();
        let meta = serde_json::json!({"kind": "test"});
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &params, &meta).unwrap();
        let (back, meta_back) = read_checkpoint(buf.as_slice()).unwrap();
        prop_assert_eq!(meta_back, meta);
        prop_assert_eq!(back.layout(), params.layout());
        prop_assert_eq!(back.snapshot(), params.snapshot());
    }
}

#[test]
fn checkpoint_rejects_truncation() {
    let mut params = ParameterSet::new();
    params.add("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &params, &serde_json::Value::Null).unwrap();
    buf.truncate(buf.len() - 3);
    assert!(read_checkpoint(buf.as_slice()).is_err());
    assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
}

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::testing::{check_gradients, relative_error};
use crate::nn::{NnError, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], r: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Straight-from-definition loss: nested loops, no shared code with the
/// implementation under test.
fn brute_force_loss(z1: &Tensor, z2: &Tensor) -> f64 {
    let (n, mut len, d) = (z1.shape()[0], z1.shape()[1], z1.shape()[2]);
    let at = |z: &Vec<Vec<Vec<f64>>>, i: usize, t: usize| z[i][t].clone();
    let unpack = |z: &Tensor| -> Vec<Vec<Vec<f64>>> {
        (0..n)
            .map(|i| {
                (0..len)
                    .map(|t| (0..d).map(|c| z.data()[(i * len + t) * d + c]).collect())
                    .collect()
            })
            .collect()
    };
    let mut a = unpack(z1);
    let mut b = unpack(z2);
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    // -log softmax of the positive among candidates
    let nll = |anchor: &[f64], cands: &[Vec<f64>], pos: usize| {
        let s: Vec<f64> = cands.iter().map(|c| dot(anchor, c)).collect();
        let denom: f64 = s.iter().map(|v| v.exp()).sum();
        -(s[pos].exp() / denom).ln()
    };
    let mut level_losses = Vec::new();
    loop {
        let mut level = 0.0;
        let mut defined = false;
        if n >= 2 {
            defined = true;
            let mut acc = 0.0;
            for t in 0..len {
                let c2: Vec<Vec<f64>> = (0..n).map(|j| at(&b, j, t)).collect();
                let c1: Vec<Vec<f64>> = (0..n).map(|j| at(&a, j, t)).collect();
                for i in 0..n {
                    acc += 0.5 * (nll(&a[i][t], &c2, i) + nll(&b[i][t], &c1, i));
                }
            }
            level += acc / (n * len) as f64;
        }
        if len >= 2 {
            defined = true;
            let mut acc = 0.0;
            for i in 0..n {
                for t in 0..len {
                    acc += 0.5 * (nll(&a[i][t], &b[i], t) + nll(&b[i][t], &a[i], t));
                }
            }
            level += acc / (n * len) as f64;
        }
        if defined {
            level_losses.push(level);
        }
        if len <= 1 {
            break;
        }
        let pool = |z: &Vec<Vec<Vec<f64>>>| -> Vec<Vec<Vec<f64>>> {
            z.iter()
                .map(|s| {
                    (0..len / 2)
                        .map(|t| (0..d).map(|c| s[2 * t][c].max(s[2 * t + 1][c])).collect())
                        .collect()
                })
                .collect()
        };
        a = pool(&a);
        b = pool(&b);
        len /= 2;
    }
    level_losses.iter().sum::<f64>() / level_losses.len() as f64
}

#[test]
fn contrastive_two_orthonormal_instances() {
    let z = Tensor::new(&[2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let loss = hierarchical_contrastive_loss(&z, &z).unwrap();
    let expected = (1.0 + (-1.0f64).exp()).ln();
    assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    assert!((loss - 0.3133).abs() < 1e-4);
}

#[test]
fn contrastive_undefined_for_single_step_single_instance() {
    let z = Tensor::new(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    assert!(matches!(
        hierarchical_contrastive_loss(&z, &z),
        Err(ServerError::UndefinedLoss { batch: 1, overlap: 1 })
    ));
}

#[test]
fn contrastive_rejects_shape_mismatch() {
    let mut r = rng(1);
    let a = random(&[2, 3, 4], &mut r);
    let b = random(&[2, 4, 4], &mut r);
    assert!(matches!(hierarchical_contrastive_loss(&a, &b), Err(ServerError::Shape(_))));
}

#[test]
fn contrastive_matches_brute_force() {
    let mut r = rng(7);
    for n in 1..=4 {
        for len in 1..=8 {
            if n == 1 && len == 1 {
                continue;
            }
            for d in [1, 3, 8] {
                let z1 = random(&[n, len, d], &mut r);
                let z2 = random(&[n, len, d], &mut r);
                let got = hierarchical_contrastive_loss(&z1, &z2).unwrap();
                let want = brute_force_loss(&z1, &z2);
                assert!((got - want).abs() < 1e-9, "n={n} len={len} d={d}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn contrastive_gradient_matches_finite_differences() {
    let mut r = rng(3);
    for (n, len, d) in [(3, 5, 4), (1, 6, 3), (4, 1, 2), (2, 7, 5)] {
        let z1 = random(&[n, len, d], &mut r);
        let z2 = random(&[n, len, d], &mut r);
        let (_, g1, g2) = hierarchical_contrastive_loss_grad(&z1, &z2).unwrap();
        let h = 1e-5;
        for (which, grad) in [(0, &g1), (1, &g2)] {
            for k in 0..z1.len() {
                let eval = |delta: f64| {
                    let (mut a, mut b) = (z1.clone(), z2.clone());
                    if which == 0 {
                        a.data_mut()[k] += delta;
                    } else {
                        b.data_mut()[k] += delta;
                    }
                    hierarchical_contrastive_loss(&a, &b).unwrap()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let err = relative_error(grad.data()[k], numeric);
                assert!(err < 1e-5, "view {which} entry {k}: {} vs {numeric}", grad.data()[k]);
            }
        }
    }
}

proptest! {
    #[test]
    fn contrastive_is_nonnegative(
        n in 1usize..5, len in 1usize..9, d in 1usize..6, seed in 0u64..1000, scale in 0.1f64..10.0
    ) {
        prop_assume!(n >= 2 || len >= 2);
        let mut r = rng(seed);
        let mut z1 = random(&[n, len, d], &mut r);
        let mut z2 = random(&[n, len, d], &mut r);
        z1.data_mut().iter_mut().for_each(|v| *v *= scale);
        z2.data_mut().iter_mut().for_each(|v| *v *= scale);
        let loss = hierarchical_contrastive_loss(&z1, &z2).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
    }
}

#[test]
fn crop_pairs_are_valid() {
    let mut r = rng(11);
    for _ in 0..10_000 {
        let len = r.random_range(2..200);
        let c = random_crop_pair(len, &mut r).unwrap();
        assert!(c.is_valid(len), "{c:?} for {len}");
        assert!(c.overlap().len() >= 2);
        assert!(c.a1 <= c.a2 && c.b1 <= c.b2);
    }
}

#[test]
fn crop_of_two_steps_is_whole_window() {
    let mut r = rng(0);
    for _ in 0..100 {
        let c = random_crop_pair(2, &mut r).unwrap();
        assert_eq!(c, CropPair { a1: 0, b1: 2, a2: 0, b2: 2 });
    }
    assert!(matches!(random_crop_pair(1, &mut r), Err(ServerError::Config(_))));
}

#[test]
fn crop_is_seed_deterministic() {
    let draw = |seed| {
        let mut r = rng(seed);
        (0..50).map(|_| random_crop_pair(128, &mut r).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(draw(5), draw(5));
    assert_ne!(draw(5), draw(6));
}

fn small_config() -> EncoderConfig {
    EncoderConfig {
        hidden: 8,
        blocks: 2,
        repr_dim: 12,
        window: 32,
        batch_size: 4,
        iterations: 20,
        ..EncoderConfig::default()
    }
}

fn sinusoids(rows: usize, f: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(rows * f);
    for t in 0..rows {
        for c in 0..f {
            let period = 12.0 + 7.0 * c as f64;
            let v = (2.0 * std::f64::consts::PI * t as f64 / period).sin() + 0.05 * r.random_range(-1.0..1.0);
            out.push(v);
        }
    }
    out
}

#[test]
fn representation_shape_is_dim_by_time() {
    let enc = Encoder::new(7, EncoderConfig::default(), &mut rng(0)).unwrap();
    let series = sinusoids(40, 7, 0);
    let m = enc.training_matrix(&series, 0..40).unwrap();
    assert_eq!((m.dim, m.len, m.values.len()), (256, 40, 256 * 40));
    assert_eq!(m.time_range(), 0..40);
    let z = enc.encode_batch(Tensor::new(&[2, 20, 7], series[..280].to_vec()).unwrap()).unwrap();
    assert_eq!(z.shape(), &[2, 20, 256]);
}

#[test]
fn encoder_rejects_wrong_feature_count() {
    let enc = Encoder::new(3, small_config(), &mut rng(0)).unwrap();
    assert!(enc.encode_batch(Tensor::zeros(&[1, 5, 4])).is_err());
    assert!(matches!(enc.encode_rows(&[0.0; 10], 0..2), Err(ServerError::Shape(_))));
    assert!(matches!(enc.inference_point(&[0.0; 9], 3), Err(ServerError::Range(_))));
}

#[test]
fn parameter_counts() {
    for f in [1, 4, 11] {
        for head in [EncoderHead::Linear, EncoderHead::ConvBlock] {
            let cfg = EncoderConfig { head, ..EncoderConfig::default() };
            let enc = Encoder::new(f, cfg.clone(), &mut rng(0)).unwrap();
            assert_eq!(enc.params().count(), cfg.parameter_count(f));
        }
    }
    let conv = EncoderConfig { head: EncoderHead::ConvBlock, ..EncoderConfig::default() };
    assert_eq!(conv.parameter_count(1), 337_152);
}

#[test]
fn receptive_fields() {
    let enc = Encoder::new(2, EncoderConfig::default(), &mut rng(0)).unwrap();
    assert_eq!(enc.receptive_field(), 29);
    let conv = EncoderConfig { head: EncoderHead::ConvBlock, ..EncoderConfig::default() };
    let enc = Encoder::new(2, conv, &mut rng(0)).unwrap();
    assert_eq!(enc.receptive_field(), 61);
}

#[test]
fn encoding_is_deterministic_per_seed() {
    let series = sinusoids(50, 3, 1);
    let run = |seed| {
        let enc = Encoder::new(3, small_config(), &mut rng(seed)).unwrap();
        enc.encode_rows(&series, 0..50).unwrap()
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4), run(5));
}

#[test]
fn no_future_leakage() {
    let enc = Encoder::new(3, small_config(), &mut rng(2)).unwrap();
    let series = sinusoids(60, 3, 2);
    let t = 37;
    let mut perturbed = series.clone();
    for v in &mut perturbed[(t + 1) * 3..] {
        *v += 100.0;
    }
    assert_eq!(enc.inference_point(&series, t).unwrap(), enc.inference_point(&perturbed, t).unwrap());
    let a = enc.encode_rows(&series, 0..60).unwrap();
    let b = enc.encode_rows(&perturbed, 0..60).unwrap();
    let d = enc.repr_dim();
    assert_eq!(a[..(t + 1) * d], b[..(t + 1) * d]);
    assert_ne!(a[(t + 1) * d..], b[(t + 1) * d..]);
}

#[test]
fn chunked_encoding_matches_single_pass() {
    let cfg = EncoderConfig { hidden: 4, repr_dim: 5, ..small_config() };
    let enc = Encoder::new(2, cfg, &mut rng(3)).unwrap();
    let rows = 2500;
    let series = sinusoids(rows, 2, 3);
    let chunked = enc.encode_rows(&series, 0..rows).unwrap();
    let whole = enc
        .encode_batch(Tensor::new(&[1, rows, 2], series.clone()).unwrap())
        .unwrap();
    for (a, b) in chunked.iter().zip(whole.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let tail = enc.encode_rows(&series, 1500..rows).unwrap();
    assert_eq!(tail.len(), 1000 * 5);
    for (a, b) in tail.iter().zip(&whole.data()[1500 * 5..]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn batched_inference_points_match_sliding_window() {
    let enc = Encoder::new(3, small_config(), &mut rng(4)).unwrap();
    let series = sinusoids(120, 3, 4);
    let d = enc.repr_dim();
    let sparse: Vec<usize> = vec![0, 5, 28, 60, 119];
    let dense: Vec<usize> = (40..100).chain([31, 32, 0]).collect();
    for times in [sparse, dense] {
        let batched = enc.inference_points(&series, &times).unwrap();
        for (k, &t) in times.iter().enumerate() {
            let single = enc.inference_point(&series, t).unwrap();
            for (a, b) in batched[k * d..(k + 1) * d].iter().zip(&single) {
                assert!((a - b).abs() < 1e-12, "t={t}");
            }
        }
    }
    assert!(matches!(enc.inference_points(&series, &[3, 120]), Err(ServerError::Range(_))));
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let cfg = EncoderConfig { hidden: 3, blocks: 2, repr_dim: 4, ..small_config() };
    for head in [EncoderHead::Linear, EncoderHead::ConvBlock] {
        let cfg = EncoderConfig { head, ..cfg.clone() };
        let mut enc = Encoder::new(2, cfg, &mut rng(5)).unwrap();
        let x = random(&[2, 9, 2], &mut rng(6));
        let mask: Vec<f64> = (0..18).map(|i| if i % 4 == 1 { 0.0 } else { 1.0 }).collect();
        let shell = enc.clone();
        let report = check_gradients(enc.params_mut(), 1e-5, |g, p| {
            let mut e = shell.clone();
            *e.params_mut() = p.clone();
            let xv = g.input(x.clone());
            let z = e.forward(g, xv, Some(mask.clone())).map_err(|e| NnError::Usage(e.to_string()))?;
            let sq = g.square(z);
            Ok(g.mean(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{head:?}: {report:?}");
    }
}

#[test]
fn pretraining_decreases_loss_on_sinusoids() {
    let cfg = EncoderConfig {
        hidden: 16,
        repr_dim: 32,
        window: 64,
        batch_size: 8,
        iterations: 200,
        ..EncoderConfig::default()
    };
    let mut enc = Encoder::new(2, cfg, &mut rng(8)).unwrap();
    let series = sinusoids(1000, 2, 8);
    let mut seen = 0;
    let report = pretrain(&mut enc, &series, &mut rng(9), |_, _, _| seen += 1).unwrap();
    assert_eq!(seen, 200);
    assert_eq!(report.version, 1);
    assert_eq!(enc.version(), 1);
    let (first, last) = report.head_tail_means(20);
    assert!(last < first, "loss rose from {first} to {last}");
}

#[test]
fn pretraining_is_deterministic() {
    let series = sinusoids(200, 2, 10);
    let run = || {
        let mut enc = Encoder::new(2, small_config(), &mut rng(1)).unwrap();
        let report = pretrain(&mut enc, &series, &mut rng(2), |_, _, _| {}).unwrap();
        (report.losses, enc.encode_rows(&series, 0..200).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn pretraining_on_single_feature_series() {
    let mut enc = Encoder::new(1, small_config(), &mut rng(1)).unwrap();
    let series = sinusoids(300, 1, 3);
    let report = pretrain(&mut enc, &series, &mut rng(2), |_, _, _| {}).unwrap();
    assert!(report.losses.iter().all(|l| l.is_finite()));
    assert_eq!(enc.training_matrix(&series, 0..300).unwrap().dim, 12);
}

#[test]
fn pretraining_aborts_on_non_finite_input() {
    let mut enc = Encoder::new(2, small_config(), &mut rng(1)).unwrap();
    let mut series = sinusoids(64, 2, 3);
    series.iter_mut().for_each(|v| *v = f64::NAN);
    match pretrain(&mut enc, &series, &mut rng(2), |_, _, _| {}) {
        Err(ServerError::Training { iteration, lr, .. }) => {
            assert_eq!(iteration, 0);
            assert!((lr - 1e-3).abs() < 1e-15);
        }
        other => panic!("expected a training error, got {other:?}"),
    }
}

#[test]
fn pretraining_rejects_too_few_rows() {
    let mut enc = Encoder::new(2, small_config(), &mut rng(1)).unwrap();
    assert!(matches!(
        pretrain(&mut enc, &[0.0, 1.0], &mut rng(2), |_, _, _| {}),
        Err(ServerError::Config(_))
    ));
}

#[test]
fn encoder_checkpoint_roundtrip() {
    let mut enc = Encoder::new(3, small_config(), &mut rng(1)).unwrap();
    let series = sinusoids(100, 3, 1);
    pretrain(&mut enc, &series, &mut rng(2), |_, _, _| {}).unwrap();
    let cols: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let mut buf = Vec::new();
    write_encoder(&enc, &mut buf, &cols).unwrap();
    let (back, back_cols) = read_encoder(buf.as_slice()).unwrap();
    assert_eq!(back_cols, cols);
    assert_eq!(back.version(), 1);
    assert_eq!(back.config(), enc.config());
    assert_eq!(back.encode_rows(&series, 0..100).unwrap(), enc.encode_rows(&series, 0..100).unwrap());
}

#[test]
fn repr_matrix_columns_follow_time() {
    let tm: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 3 steps × 2 dims
    let m = ReprMatrix::from_time_major(2, 2, 10, &tm).unwrap();
    assert_eq!(m.values, vec![0.0, 2.0, 4.0, 1.0, 3.0, 5.0]);
    assert_eq!(m.column(11), Some(vec![2.0, 3.0]));
    assert_eq!(m.column(13), None);
    assert!(m.covers(12) && !m.covers(9));
    assert_eq!(m.payload_bytes(), 48);
}

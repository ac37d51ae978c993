use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{assign_features, make_windows, normalize, split, synth, Setting, TimeSeriesTable, WindowBatch, WindowSpec};
use crate::nn::testing::check_gradients;
use crate::nn::{Graph, NnError, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn random(shape: &[usize], r: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn config(inputs: &[&str], targets: &[&str], variant: ClientVariant) -> ClientConfig {
    ClientConfig {
        id: inputs.join("+"),
        inputs: names(inputs),
        targets: names(targets),
        variant,
        ..ClientConfig::default()
    }
}

fn small(inputs: &[&str], targets: &[&str], variant: ClientVariant) -> ClientConfig {
    ClientConfig {
        seq_len: 16,
        hidden: 4,
        repr_dim: 5,
        ..config(inputs, targets, variant)
    }
}

fn weather(rows: usize) -> TimeSeriesTable {
    let cols = names(&["Tdew", "rh", "sh", "Tpot", "p", "H2OC", "rho"]);
    let t = synth::generate_weather(rows, 3).unwrap().select_resolved(&cols).unwrap();
    normalize(&t, &split(rows).unwrap()).0
}

#[test]
fn mse_examples() {
    let y = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
    assert_eq!(mse_loss(&y, &y).unwrap(), 0.0);
    assert_eq!(mse_loss(&y, &Tensor::zeros(&[1, 2])).unwrap(), 2.5);
    assert!(matches!(mse_loss(&y, &Tensor::zeros(&[2, 1])), Err(ClientError::Usage(_))));
    let mut r = rng(1);
    let (a, b) = (random(&[7, 3], &mut r), random(&[7, 3], &mut r));
    let oracle: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / 21.0;
    assert!((mse_loss(&a, &b).unwrap() - oracle).abs() < 1e-12);
}

#[test]
fn output_shapes_for_every_setting() {
    for setting in Setting::ALL {
        for client in assign_features(setting).clients {
            let inputs: Vec<&str> = client.iter().map(String::as_str).collect();
            for (targets, width) in [(vec!["H2OC"], 1), (inputs.clone(), inputs.len())] {
                let cfg = config(&inputs, &targets, ClientVariant::WithRepr);
                let model = ClientModel::new(cfg, &mut rng(0)).unwrap();
                let y = model
                    .predict(Tensor::zeros(&[1, 128, inputs.len()]), Some(Tensor::zeros(&[1, 256])))
                    .unwrap();
                assert_eq!(y.shape(), &[1, width]);
            }
        }
    }
    let cfg = ClientConfig { horizon: 4, ..small(&["rh", "p"], &["rh", "p"], ClientVariant::NoFm) };
    let model = ClientModel::new(cfg, &mut rng(0)).unwrap();
    assert_eq!(model.predict(Tensor::zeros(&[3, 16, 2]), None).unwrap().shape(), &[3, 8]);
}

#[test]
fn representation_presence_is_checked() {
    let with = ClientModel::new(small(&["rh"], &["H2OC"], ClientVariant::WithRepr), &mut rng(0)).unwrap();
    assert!(matches!(with.predict(Tensor::zeros(&[1, 16, 1]), None), Err(ClientError::Usage(_))));
    assert!(matches!(
        with.predict(Tensor::zeros(&[1, 16, 1]), Some(Tensor::zeros(&[1, 4]))),
        Err(ClientError::Usage(_))
    ));
    let without = ClientModel::new(small(&["rh"], &["H2OC"], ClientVariant::NoFm), &mut rng(0)).unwrap();
    assert!(matches!(
        without.predict(Tensor::zeros(&[1, 16, 1]), Some(Tensor::zeros(&[1, 5]))),
        Err(ClientError::Usage(_))
    ));
    assert!(matches!(without.predict(Tensor::zeros(&[1, 16, 2]), None), Err(ClientError::Usage(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let short = ClientConfig { seq_len: 14, ..small(&["rh"], &["H2OC"], ClientVariant::NoFm) };
    assert!(matches!(ClientModel::new(short, &mut rng(0)), Err(ClientError::Config(_))));
    let empty = small(&[], &["H2OC"], ClientVariant::NoFm);
    assert!(matches!(ClientModel::new(empty, &mut rng(0)), Err(ClientError::Config(_))));
    let ok = ClientConfig { seq_len: 15, ..small(&["rh"], &["H2OC"], ClientVariant::NoFm) };
    assert!(ClientModel::new(ok, &mut rng(0)).is_ok());
}

#[test]
fn zeroed_branch_ignores_representation() {
    let mut model = ClientModel::new(small(&["Tdew", "rh"], &["H2OC"], ClientVariant::WithRepr), &mut rng(2)).unwrap();
    model.zero_repr_branch();
    let mut r = rng(3);
    let x = random(&[4, 16, 2], &mut r);
    let a = model.predict(x.clone(), Some(random(&[4, 5], &mut r))).unwrap();
    let b = model.predict(x, Some(random(&[4, 5], &mut r))).unwrap();
    assert_eq!(a, b);
}

#[test]
fn no_fm_equivalence_of_outputs_and_gradients() {
    let mut with = ClientModel::new(small(&["rh", "p"], &["rh", "p"], ClientVariant::WithRepr), &mut rng(4)).unwrap();
    let mut without = ClientModel::new(small(&["rh", "p"], &["rh", "p"], ClientVariant::NoFm), &mut rng(4)).unwrap();
    with.zero_repr_branch();
    for id in without.params().ids() {
        let name = without.params().name(id).to_owned();
        let shared = with.params().id(&name).unwrap();
        *with.params_mut().value_mut(shared) = without.params().value(id).clone();
    }
    let mut r = rng(5);
    for _ in 0..5 {
        let x = random(&[3, 16, 2], &mut r);
        let h = random(&[3, 5], &mut r);
        let y = random(&[3, 2], &mut r);

        let mut g = Graph::new();
        let (xv, hv) = (g.input(x.clone()), g.input(h));
        let p = with.forward(&mut g, xv, Some(hv)).unwrap();
        let l = g.mse(p, &y).unwrap();
        with.params_mut().zero_grad();
        g.backward(l, with.params_mut()).unwrap();
        let pred_with = g.value(p).clone();

        let mut g = Graph::new();
        let xv = g.input(x);
        let p = without.forward(&mut g, xv, None).unwrap();
        let l = g.mse(p, &y).unwrap();
        without.params_mut().zero_grad();
        g.backward(l, without.params_mut()).unwrap();

        assert_eq!(&pred_with, g.value(p));
        for id in without.params().ids() {
            let name = without.params().name(id);
            assert_eq!(without.params().grad(id), with.params().grad_of(name).unwrap(), "{name}");
        }
    }
}

#[test]
fn composed_gradients_match_finite_differences() {
    let mut model = ClientModel::new(small(&["Tdew", "rh"], &["H2OC", "sh"], ClientVariant::WithRepr), &mut rng(6)).unwrap();
    let mut r = rng(7);
    let x = random(&[3, 16, 2], &mut r);
    let h = random(&[3, 5], &mut r);
    let y = random(&[3, 2], &mut r);
    let shell = model.clone();
    let report = check_gradients(model.params_mut(), 1e-5, |g, p| {
        let mut m = shell.clone();
        *m.params_mut() = p.clone();
        let (xv, hv) = (g.input(x.clone()), g.input(h.clone()));
        let pred = m.forward(g, xv, Some(hv)).map_err(|e| NnError::Usage(e.to_string()))?;
        g.mse(pred, &y)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn composed_model_is_causal_and_window_cropped() {
    let model = ClientModel::new(small(&["rh"], &["H2OC"], ClientVariant::NoFm), &mut rng(8)).unwrap();
    let mut r = rng(9);
    let x = random(&[1, 40, 1], &mut r);
    let full = model.predict(x.clone(), None).unwrap();
    let rf = model.config().receptive_field();
    assert_eq!(rf, 15);
    let tail = Tensor::new(&[1, rf, 1], x.data()[40 - rf..].to_vec()).unwrap();
    let cropped = model.predict(tail, None).unwrap();
    assert!((full.data()[0] - cropped.data()[0]).abs() < 1e-12);
    let mut older = x.clone();
    for v in &mut older.data_mut()[..40 - rf] {
        *v = 50.0;
    }
    assert!((model.predict(older, None).unwrap().data()[0] - full.data()[0]).abs() < 1e-12);
}

/// Independent restatement of the patience rule.
fn reference_stop(vals: &[f64], patience: usize) -> (usize, usize) {
    let (mut best, mut best_i, mut bad) = (f64::INFINITY, 0, 0);
    for (i, &v) in vals.iter().enumerate() {
        if v < best {
            best = v;
            best_i = i + 1;
            bad = 0;
        } else {
            bad += 1;
            if bad == patience {
                return (i + 1, best_i);
            }
        }
    }
    (vals.len(), best_i)
}

fn scripted(vals: &[f64]) -> (usize, usize, Vec<usize>, f64) {
    let mut params = crate::nn::ParameterSet::new();
    let id = params.add("w", Tensor::scalar(0.0)).unwrap();
    let mut state = TrainState::new(3);
    let mut counters = Vec::new();
    let mut stop_at = vals.len();
    for (i, &v) in vals.iter().enumerate() {
        params.value_mut(id).data_mut()[0] = (i + 1) as f64;
        let d = state.observe(v, &params);
        counters.push(state.since_improvement);
        if d == StopDecision::Stop {
            stop_at = i + 1;
            break;
        }
    }
    state.restore_best(&mut params).unwrap();
    (stop_at, state.best_epoch, counters, params.value(id).data()[0])
}

#[test]
fn early_stopping_scripts() {
    let (stop, best, _, restored) = scripted(&[5.0, 4.0, 4.5, 4.6, 4.7]);
    assert_eq!((stop, best, restored), (5, 2, 2.0));
    let (_, _, counters, _) = scripted(&[5.0, 4.0, 4.5, 3.9, 4.0, 4.1]);
    assert_eq!(counters[..4], [0, 0, 1, 0]);
    let (stop, best, _, _) = scripted(&[3.0, 3.0, 3.0]);
    assert_eq!((stop, best), (3, 1));
}

proptest! {
    #[test]
    fn early_stopping_follows_patience_rule(vals in proptest::collection::vec(0u8..6, 1..30)) {
        let vals: Vec<f64> = vals.into_iter().map(f64::from).collect();
        let (stop, best, _, restored) = scripted(&vals);
        let (want_stop, want_best) = reference_stop(&vals, 3);
        prop_assert_eq!(stop, want_stop);
        prop_assert_eq!(best, want_best);
        prop_assert_eq!(restored, want_best as f64);
    }
}

fn h2oc_windows(table: &TimeSeriesTable, inputs: &[&str], range: std::ops::Range<usize>, seq_len: usize) -> WindowBatch {
    make_windows(
        table,
        &names(inputs),
        &names(&["H2OC"]),
        range,
        WindowSpec { seq_len, horizon: 1, stride: 4 },
    )
    .unwrap()
}

#[test]
fn no_fm_smoke_training_descends() {
    let table = weather(3000);
    let s = split(3000).unwrap();
    let inputs = ["Tdew", "rh", "sh"];
    let train = h2oc_windows(&table, &inputs, s.train.clone(), 128);
    let val = h2oc_windows(&table, &inputs, s.val.clone(), 128);
    let cfg = ClientConfig { max_epochs: 5, ..config(&inputs, &["H2OC"], ClientVariant::NoFm) };
    let mut model = ClientModel::new(cfg, &mut rng(10)).unwrap();
    let initial = evaluate(&model, ClientInputs::new(&train, None)).unwrap().overall;
    let mut seen = Vec::new();
    let out = local_train(
        &mut model,
        ClientInputs::new(&train, None),
        ClientInputs::new(&val, None),
        &mut rng(11),
        |r| seen.push(r.epoch),
    )
    .unwrap();
    assert_eq!(seen, out.records.iter().map(|r| r.epoch).collect::<Vec<_>>());
    let mut losses = vec![initial];
    losses.extend(out.records.iter().map(|r| r.train_loss));
    let drops = losses.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(drops >= 3, "{losses:?}");
    let report = evaluate(&model, ClientInputs::new(&val, None)).unwrap();
    assert!((report.overall - out.best_val).abs() < 1e-12);
}

#[test]
fn training_with_representations_restores_best() {
    let table = weather(1500);
    let s = split(1500).unwrap();
    let train = h2oc_windows(&table, &["rh"], s.train.clone(), 16);
    let val = h2oc_windows(&table, &["rh"], s.val.clone(), 16);
    let mut r = rng(12);
    let rt: Vec<f64> = (0..train.len() * 5).map(|_| r.random_range(-1.0..1.0)).collect();
    let rv: Vec<f64> = (0..val.len() * 5).map(|_| r.random_range(-1.0..1.0)).collect();
    let cfg = ClientConfig { max_epochs: 8, lr: 1e-3, ..small(&["rh"], &["H2OC"], ClientVariant::WithRepr) };
    let mut model = ClientModel::new(cfg, &mut rng(13)).unwrap();
    let out = local_train(
        &mut model,
        ClientInputs::new(&train, Some(&rt)),
        ClientInputs::new(&val, Some(&rv)),
        &mut rng(14),
        |_| {},
    )
    .unwrap();
    let best = out.records.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val, best);
    let now = evaluate(&model, ClientInputs::new(&val, Some(&rv))).unwrap().overall;
    assert!((now - best).abs() < 1e-12);
    assert!(matches!(
        evaluate(&model, ClientInputs::new(&val, None)),
        Err(ClientError::Usage(_))
    ));
    assert!(matches!(
        evaluate(&model, ClientInputs::new(&val, Some(&rv[5..]))),
        Err(ClientError::Usage(_))
    ));
}

#[test]
fn training_is_seed_deterministic() {
    let table = weather(800);
    let s = split(800).unwrap();
    let train = h2oc_windows(&table, &["Tdew"], s.train.clone(), 16);
    let val = h2oc_windows(&table, &["Tdew"], s.val.clone(), 16);
    let run = || {
        let cfg = ClientConfig { max_epochs: 3, ..small(&["Tdew"], &["H2OC"], ClientVariant::NoFm) };
        let mut m = ClientModel::new(cfg, &mut rng(1)).unwrap();
        let out = local_train(&mut m, ClientInputs::new(&train, None), ClientInputs::new(&val, None), &mut rng(2), |_| {}).unwrap();
        (out, m.params().snapshot())
    };
    assert_eq!(run(), run());
}

#[test]
fn empty_and_non_finite_training_sets_fail() {
    let table = weather(200);
    let mut cfg = small(&["rh"], &["H2OC"], ClientVariant::NoFm);
    let empty = h2oc_windows(&table, &["rh"], 0..10, 16);
    let mut model = ClientModel::new(cfg.clone(), &mut rng(0)).unwrap();
    assert!(matches!(
        local_train(&mut model, ClientInputs::new(&empty, None), ClientInputs::new(&empty, None), &mut rng(0), |_| {}),
        Err(ClientError::Usage(_))
    ));

    let mut bad = table.clone();
    let c = bad.col_index("H2OC").unwrap();
    for row in 0..bad.len() {
        bad.set(row, c, f64::NAN);
    }
    let windows = h2oc_windows(&bad, &["rh"], 0..200, 16);
    cfg.id = "bad".into();
    let mut model = ClientModel::new(cfg, &mut rng(0)).unwrap();
    match local_train(&mut model, ClientInputs::new(&windows, None), ClientInputs::new(&windows, None), &mut rng(0), |_| {}) {
        Err(ClientError::Training { client, epoch, batch, .. }) => {
            assert_eq!((client.as_str(), epoch, batch), ("bad", 1, 0));
        }
        other => panic!("expected a training error, got {other:?}"),
    }
}

#[test]
fn constant_zero_predictor_scores_target_variance() {
    let table = weather(4000);
    let s = split(4000).unwrap();
    let test = make_windows(&table, &names(&["rh", "p"]), &names(&["rh", "p"]), s.test.clone(), WindowSpec { seq_len: 16, horizon: 1, stride: 1 }).unwrap();
    let mut model = ClientModel::new(small(&["rh", "p"], &["rh", "p"], ClientVariant::NoFm), &mut rng(0)).unwrap();
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        model.params_mut().value_mut(id).fill(0.0);
    }
    let report = evaluate(&model, ClientInputs::new(&test, None)).unwrap();
    let keys: Vec<&str> = report.per_variable.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(keys, ["rh", "p"]);
    for (k, name) in ["rh", "p"].iter().enumerate() {
        let direct: f64 = (0..test.len()).map(|i| test.target(i)[k].powi(2)).sum::<f64>() / test.len() as f64;
        assert!((report.get(name).unwrap() - direct).abs() < 1e-12);
        assert!(direct > 0.3 && direct < 3.0, "{name}: {direct}");
    }
}

#[test]
fn memorizes_a_tiny_training_set() {
    let table = weather(400);
    let train = make_windows(&table, &names(&["Tdew", "rh"]), &names(&["H2OC"]), 0..40, WindowSpec { seq_len: 16, horizon: 1, stride: 8 }).unwrap();
    assert_eq!(train.len(), 3);
    let cfg = ClientConfig {
        lr: 1e-2,
        max_epochs: 400,
        patience: 400,
        hidden: 8,
        ..small(&["Tdew", "rh"], &["H2OC"], ClientVariant::NoFm)
    };
    let mut model = ClientModel::new(cfg, &mut rng(0)).unwrap();
    let data = ClientInputs::new(&train, None);
    local_train(&mut model, data, data, &mut rng(1), |_| {}).unwrap();
    assert!(evaluate(&model, data).unwrap().overall < 1e-3);
}

#[test]
fn parameter_counts_match_closed_form() {
    for variant in [ClientVariant::NoFm, ClientVariant::WithRepr] {
        for (inputs, targets) in [(vec!["rh"], vec!["H2OC"]), (vec!["Tdew", "Tpot", "rh", "p", "sh"], vec!["Tdew", "Tpot", "rh", "p", "sh"])] {
            let cfg = config(&inputs, &targets, variant);
            let m = ClientModel::new(cfg.clone(), &mut rng(0)).unwrap();
            assert_eq!(m.params().count(), cfg.parameter_count());
        }
    }
}

#[test]
fn client_checkpoint_roundtrip() {
    let model = ClientModel::new(small(&["rh", "p"], &["H2OC"], ClientVariant::WithRepr), &mut rng(3)).unwrap();
    let mut buf = Vec::new();
    write_client(&model, &mut buf).unwrap();
    let back = read_client(buf.as_slice()).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(back.params().snapshot(), model.params().snapshot());
}

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowBatch;
use crate::nn::{Adam, CosineSchedule, Graph, NnError, ParameterSet, Tensor};

use super::{ClientError, ClientModel};

/// Windows plus, for models with a representation branch, one
/// representation vector per window (row-major `windows × repr_dim`).
#[derive(Clone, Copy, Debug)]
pub struct ClientInputs<'a> {
    pub windows: &'a WindowBatch,
    pub repr: Option<&'a [f64]>,
}

impl<'a> ClientInputs<'a> {
    pub fn new(windows: &'a WindowBatch, repr: Option<&'a [f64]>) -> Self {
        Self { windows, repr }
    }

    fn check(&self, model: &ClientModel) -> Result<(), ClientError> {
        let cfg = model.config();
        if self.windows.n_features() != cfg.inputs.len()
            || self.windows.target_width() != cfg.output_dim()
        {
            return Err(ClientError::Usage(format!(
                "client {:?}: windows carry {} features and {} targets, model expects {} and {}",
                cfg.id,
                self.windows.n_features(),
                self.windows.target_width(),
                cfg.inputs.len(),
                cfg.output_dim()
            )));
        }
        match (model.uses_repr(), self.repr) {
            (true, None) => Err(ClientError::Usage(format!(
                "client {:?} requires representations",
                cfg.id
            ))),
            (false, Some(_)) => Err(ClientError::Usage(format!(
                "client {:?} takes no representations",
                cfg.id
            ))),
            (true, Some(r)) if r.len() != self.windows.len() * cfg.repr_dim => {
                Err(ClientError::Usage(format!(
                    "{} representation values for {} windows of dimension {}",
                    r.len(),
                    self.windows.len(),
                    cfg.repr_dim
                )))
            }
            _ => Ok(()),
        }
    }

    fn batch(&self, model: &ClientModel, idx: &[usize]) -> (Tensor, Option<Tensor>, Tensor) {
        let x = self.windows.gather_inputs(idx, model.config().receptive_field());
        let h = self.repr.map(|r| {
            let d = model.config().repr_dim;
            let mut data = Vec::with_capacity(idx.len() * d);
            for &i in idx {
                data.extend_from_slice(&r[i * d..(i + 1) * d]);
            }
            Tensor::new(&[idx.len(), d], data).expect("representation batch")
        });
        (x, h, self.windows.gather_targets(idx))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Early-stopping bookkeeping.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val: f64,
    pub best_epoch: usize,
    pub since_improvement: usize,
    patience: usize,
    best: Option<Vec<Tensor>>,
}

impl TrainState {
    pub fn new(patience: usize) -> Self {
        Self {
            epoch: 0,
            best_val: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
            patience: patience.max(1),
            best: None,
        }
    }

    /// Records the validation loss of the epoch that just finished. Only a
    /// strictly lower loss counts as an improvement.
    pub fn observe(&mut self, val: f64, params: &ParameterSet) -> StopDecision {
        self.epoch += 1;
        if val < self.best_val {
            self.best_val = val;
            self.best_epoch = self.epoch;
            self.since_improvement = 0;
            self.best = Some(params.snapshot());
        } else {
            self.since_improvement += 1;
        }
        if self.since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn restore_best(&self, params: &mut ParameterSet) -> Result<(), NnError> {
        match &self.best {
            Some(s) => params.restore(s),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
    pub records: Vec<EpochRecord>,
}

/// Per-variable test error in normalized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_variable: Vec<(String, f64)>,
    pub overall: f64,
    pub windows: usize,
}

impl EvalReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.per_variable.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Mean of squared elementwise differences.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64, ClientError> {
    if pred.shape() != target.shape() {
        return Err(ClientError::Usage(format!(
            "mse of prediction {:?} against target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(crate::nn::mse(pred.data(), target.data()))
}

const EVAL_BATCH: usize = 512;

/// Mean squared error per target variable (averaged over windows and
/// horizon steps) and over all outputs.
pub fn evaluate(model: &ClientModel, data: ClientInputs<'_>) -> Result<EvalReport, ClientError> {
    data.check(model)?;
    let n = data.windows.len();
    if n == 0 {
        return Err(ClientError::Usage(format!(
            "client {:?}: nothing to evaluate",
            model.id()
        )));
    }
    let targets = &model.config().targets;
    let nt = targets.len();
    let mut sums = vec![0.0; nt];
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, h, y) = data.batch(model, chunk);
        let pred = model.predict(x, h)?;
        for (k, (p, t)) in pred.data().iter().zip(y.data()).enumerate() {
            sums[k % nt] += (p - t) * (p - t);
        }
    }
    let per_var = n * data.windows.horizon();
    let per_variable: Vec<(String, f64)> = targets
        .iter()
        .zip(&sums)
        .map(|(name, s)| (name.clone(), s / per_var as f64))
        .collect();
    let overall = sums.iter().sum::<f64>() / (per_var * nt) as f64;
    Ok(EvalReport {
        per_variable,
        overall,
        windows: n,
    })
}

/// Minibatch Adam on the MSE with a per-epoch cosine schedule over
/// `max_epochs`, validating after every epoch and stopping after `patience`
/// epochs without strict improvement. The best parameters are restored on
/// exit. `on_epoch` is called after each epoch.
pub fn local_train<R: Rng + ?Sized>(
    model: &mut ClientModel,
    train: ClientInputs<'_>,
    val: ClientInputs<'_>,
    rng: &mut R,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, ClientError> {
    train.check(model)?;
    val.check(model)?;
    if train.windows.is_empty() {
        return Err(ClientError::Usage(format!(
            "client {:?}: empty training set",
            model.id()
        )));
    }
    if val.windows.is_empty() {
        log::warn!("client {:?}: no validation windows, early stopping on train loss", model.id());
    }
    let cfg = model.config().clone();
    let schedule = CosineSchedule::new(cfg.lr, cfg.max_epochs);
    let mut adam = Adam::new(model.params());
    let mut state = TrainState::new(cfg.patience);
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..train.windows.len()).collect();
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let lr = schedule.lr(epoch);
        order.shuffle(rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |reason: String| ClientError::Training {
                client: cfg.id.clone(),
                epoch: epoch + 1,
                batch: bi,
                lr,
                reason,
            };
            let (x, h, y) = train.batch(model, chunk);
            let mut g = Graph::new();
            let xv = g.input(x);
            let hv = h.map(|h| g.input(h));
            let pred = model.forward(&mut g, xv, hv)?;
            let loss = g.mse(pred, &y).map_err(|e| diverged(e.to_string()))?;
            total += g.value(loss).data()[0] * chunk.len() as f64;
            let params = model.params_mut();
            params.zero_grad();
            g.backward(loss, params).map_err(|e| diverged(e.to_string()))?;
            adam.step(params, lr)?;
        }
        let train_loss = total / train.windows.len() as f64;
        let val_loss = if val.windows.is_empty() {
            train_loss
        } else {
            evaluate(model, val)?.overall
        };
        let decision = state.observe(val_loss, model.params());
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            lr,
            improved: state.best_epoch == epoch + 1,
        };
        log::debug!(
            "client {} epoch {}: train {train_loss:.5} val {val_loss:.5}",
            cfg.id,
            epoch + 1
        );
        on_epoch(&record);
        records.push(record);
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    state.restore_best(model.params_mut())?;
    Ok(TrainOutcome {
        epochs_run: records.len(),
        best_epoch: state.best_epoch,
        best_val: state.best_val,
        stopped_early,
        records,
    })
}

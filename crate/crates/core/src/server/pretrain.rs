use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::nn::{read_checkpoint, write_checkpoint, Adam, CosineSchedule, Graph, Tensor};

use super::{contrastive_node, random_crop_pair, Encoder, EncoderConfig, ServerError};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
    pub version: u64,
}

impl PretrainReport {
    /// Mean loss over the first and last `k` iterations.
    pub fn head_tail_means(&self, k: usize) -> (f64, f64) {
        let k = k.clamp(1, self.losses.len().max(1));
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        (
            mean(&self.losses[..k.min(self.losses.len())]),
            mean(&self.losses[self.losses.len().saturating_sub(k)..]),
        )
    }
}

/// Trains the encoder on a row-major `T × input_dims` series.
///
/// Each iteration samples `batch_size` windows, draws one crop pair shared by
/// the batch, encodes both crops under independent timestep masks and steps
/// Adam on the contrastive loss of the overlapping part. The learning rate
/// follows a cosine schedule over `iterations`. `on_iter` receives
/// `(iteration, loss, lr)`.
pub fn pretrain<R: Rng + ?Sized>(
    encoder: &mut Encoder,
    series: &[f64],
    rng: &mut R,
    mut on_iter: impl FnMut(usize, f64, f64),
) -> Result<PretrainReport, ServerError> {
    let cfg: EncoderConfig = encoder.config().clone();
    let f = encoder.input_dims();
    if series.len() % f != 0 {
        return Err(ServerError::Shape(format!(
            "series of {} values is not a multiple of {f} features",
            series.len()
        )));
    }
    let rows = series.len() / f;
    let window = cfg.window.min(rows);
    if window < 2 {
        return Err(ServerError::Config(format!(
            "pretraining needs at least 2 rows, got {rows}"
        )));
    }
    if cfg.batch_size < 2 {
        return Err(ServerError::Config("pretraining batch_size must be at least 2".into()));
    }
    let schedule = CosineSchedule::new(cfg.lr, cfg.iterations);
    let mut adam = Adam::new(encoder.params());
    let mut losses = Vec::with_capacity(cfg.iterations);
    let keep = 1.0 - cfg.mask_prob;

    for it in 0..cfg.iterations {
        let lr = schedule.lr(it);
        let starts: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.random_range(0..=rows - window))
            .collect();
        let crop = random_crop_pair(window, rng)?;
        let view = |range: std::ops::Range<usize>| {
            let mut data = Vec::with_capacity(starts.len() * range.len() * f);
            for &s in &starts {
                data.extend_from_slice(&series[(s + range.start) * f..(s + range.end) * f]);
            }
            Tensor::new(&[starts.len(), range.len(), f], data)
        };
        let mut mask = |len: usize| -> Vec<f64> {
            (0..starts.len() * len)
                .map(|_| if rng.random_bool(keep) { 1.0 } else { 0.0 })
                .collect()
        };
        let (r1, r2) = (crop.first(), crop.second());
        let (m1, m2) = (mask(r1.len()), mask(r2.len()));
        let overlap = crop.overlap().len();

        let mut g = Graph::new();
        let x1 = g.input(view(r1.clone())?);
        let x2 = g.input(view(r2)?);
        let z1 = encoder.forward(&mut g, x1, Some(m1))?;
        let z2 = encoder.forward(&mut g, x2, Some(m2))?;
        let z1 = g.slice_time(z1, crop.a2 - crop.a1, overlap)?;
        let z2 = g.slice_time(z2, 0, overlap)?;
        let diverged = |reason: String, grad_norm: f64| ServerError::Training {
            iteration: it,
            lr,
            grad_norm,
            reason,
        };
        let loss = match contrastive_node(&mut g, z1, z2) {
            Ok(v) => v,
            Err(ServerError::NonFiniteLoss(m)) => return Err(diverged(m, f64::NAN)),
            Err(e) => return Err(e),
        };
        let value = g.value(loss).data()[0];
        let params = encoder.params_mut();
        params.zero_grad();
        if let Err(e) = g.backward(loss, params) {
            return Err(diverged(e.to_string(), params.grad_norm()));
        }
        let grad_norm = params.grad_norm();
        if !grad_norm.is_finite() {
            return Err(diverged("non-finite gradient".into(), grad_norm));
        }
        adam.step(params, lr)?;
        if !params.ids().all(|id| params.value(id).all_finite()) {
            return Err(diverged("non-finite parameters after update".into(), grad_norm));
        }
        log::debug!("pretrain iteration {it}: loss {value:.5} lr {lr:.3e}");
        on_iter(it, value, lr);
        losses.push(value);
    }
    let version = encoder.bump_version();
    Ok(PretrainReport { losses, version })
}

/// Saves encoder weights with enough metadata to rebuild it.
pub fn write_encoder<W: Write>(
    encoder: &Encoder,
    w: W,
    columns: &[String],
) -> Result<(), ServerError> {
    let meta = json!({
        "kind": "encoder",
        "input_dims": encoder.input_dims(),
        "version": encoder.version(),
        "columns": columns,
        "config": encoder.config(),
    });
    Ok(write_checkpoint(w, encoder.params(), &meta)?)
}

/// Loads an encoder written by [`write_encoder`], returning it with its
/// column list.
pub fn read_encoder<R: Read>(r: R) -> Result<(Encoder, Vec<String>), ServerError> {
    let (params, meta) = read_checkpoint(r)?;
    let bad = |m: &str| ServerError::Config(format!("encoder checkpoint: {m}"));
    if meta.get("kind").and_then(|k| k.as_str()) != Some("encoder") {
        return Err(bad("not an encoder checkpoint"));
    }
    let input_dims = meta["input_dims"].as_u64().ok_or_else(|| bad("missing input_dims"))? as usize;
    let version = meta["version"].as_u64().ok_or_else(|| bad("missing version"))?;
    let config: EncoderConfig =
        serde_json::from_value(meta["config"].clone()).map_err(|e| bad(&e.to_string()))?;
    let columns: Vec<String> =
        serde_json::from_value(meta["columns"].clone()).map_err(|e| bad(&e.to_string()))?;
    let encoder = Encoder::from_parameters(input_dims, config, params, version)?;
    Ok((encoder, columns))
}

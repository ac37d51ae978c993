use std::f64::consts::PI;

use super::{NnError, ParameterSet, Tensor};

/// Adam with bias correction and no weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParameterSet) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &ParameterSet, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            params
                .ids()
                .map(|id| Tensor::zeros(params.value(id).shape()))
                .collect()
        };
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.v
    }

    /// Applies one update from the gradients currently held in `params`.
    pub fn step(&mut self, params: &mut ParameterSet, lr: f64) -> Result<(), NnError> {
        if params.len() != self.m.len() {
            return Err(NnError::Config(format!(
                "optimizer tracks {} parameters, set has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, id) in params.ids().enumerate() {
            if params.value(id).shape() != self.m[i].shape() {
                return Err(NnError::Config(format!(
                    "parameter {} changed shape to {:?}",
                    params.name(id),
                    params.value(id).shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, id) in params.ids().enumerate() {
            let grad = params.grad(id).data().to_vec();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for ((mi, vi), g) in m.iter_mut().zip(v.iter_mut()).zip(&grad) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
            }
            let (m, v) = (self.m[i].data(), self.v[i].data());
            for ((p, mi), vi) in params.value_mut(id).data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `lr0` down to `eta_min` over `t_max` steps.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CosineSchedule {
    pub lr0: f64,
    pub eta_min: f64,
    pub t_max: usize,
}

impl CosineSchedule {
    pub fn new(lr0: f64, t_max: usize) -> Self {
        Self {
            lr0,
            eta_min: 0.0,
            t_max,
        }
    }

    /// Learning rate at `step`; steps beyond `t_max` are clamped with a warning.
    pub fn lr(&self, step: usize) -> f64 {
        let t_max = self.t_max.max(1);
        let step = if step > t_max {
            log::warn!("cosine schedule step {step} clamped to t_max {t_max}");
            t_max
        } else {
            step
        };
        let phase = PI * step as f64 / t_max as f64;
        self.eta_min + (self.lr0 - self.eta_min) * (1.0 + phase.cos()) / 2.0
    }
}

use std::collections::HashMap;

use rand::Rng;

use super::{NnError, Tensor};

/// Handle to one entry of a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named trainable tensors together with their gradient slots.
///
/// Gradients are never accumulated across backward passes: a second
/// `Graph::backward` without an intervening [`ParameterSet::zero_grad`] is
/// rejected.
#[derive(Clone, Debug, Default)]
pub struct ParameterSet {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    grads_written: bool,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::Config(format!("duplicate parameter name {name:?}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.to_owned(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_owned(),
            value,
            grad,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Adds a tensor drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId, NnError> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape, data)?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn grad_of(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.grad(id))
    }

    pub fn grads_written(&self) -> bool {
        self.grads_written
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
        self.grads_written = false;
    }

    pub(crate) fn begin_backward(&mut self) -> Result<(), NnError> {
        if self.grads_written {
            return Err(NnError::Usage(
                "gradients already populated; call zero_grad before another backward".into(),
            ));
        }
        self.grads_written = true;
        Ok(())
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.grad.data().iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Copies of all parameter values, in insertion order.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) -> Result<(), NnError> {
        if snapshot.len() != self.entries.len() {
            return Err(NnError::Config(format!(
                "snapshot holds {} tensors, parameter set has {}",
                snapshot.len(),
                self.entries.len()
            )));
        }
        for (e, s) in self.entries.iter_mut().zip(snapshot) {
            if e.value.shape() != s.shape() {
                return Err(NnError::Shape(format!(
                    "snapshot shape {:?} does not match parameter {} {:?}",
                    s.shape(),
                    e.name,
                    e.value.shape()
                )));
            }
            e.value = s.clone();
        }
        Ok(())
    }

    /// `(name, shape)` for every parameter, in insertion order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.value.shape().to_vec()))
            .collect()
    }
}

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::ServerError;

/// Global representation: `dim × len` values, row-major, covering absolute
/// time steps `[start, start + len)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReprMatrix {
    pub version: u64,
    pub dim: usize,
    pub start: usize,
    pub len: usize,
    pub values: Vec<f64>,
}

impl ReprMatrix {
    pub fn new(
        version: u64,
        dim: usize,
        start: usize,
        len: usize,
        values: Vec<f64>,
    ) -> Result<Self, ServerError> {
        if values.len() != dim * len {
            return Err(ServerError::Shape(format!(
                "representation of {dim} × {len} given {} values",
                values.len()
            )));
        }
        Ok(Self {
            version,
            dim,
            start,
            len,
            values,
        })
    }

    /// Builds from a row-major `len × dim` (time-major) buffer.
    pub fn from_time_major(
        version: u64,
        dim: usize,
        start: usize,
        time_major: &[f64],
    ) -> Result<Self, ServerError> {
        let len = time_major.len() / dim.max(1);
        let mut values = vec![0.0; dim * len];
        for t in 0..len {
            for c in 0..dim {
                values[c * len + t] = time_major[t * dim + c];
            }
        }
        Self::new(version, dim, start, len, values)
    }

    pub fn time_range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }

    pub fn covers(&self, t: usize) -> bool {
        self.time_range().contains(&t)
    }

    /// The `dim`-vector at absolute time `t`.
    pub fn column(&self, t: usize) -> Option<Vec<f64>> {
        if !self.covers(t) {
            return None;
        }
        let k = t - self.start;
        Some((0..self.dim).map(|c| self.values[c * self.len + k]).collect())
    }

    /// Payload size in bytes (`8 · dim · len`).
    pub fn payload_bytes(&self) -> usize {
        8 * self.dim * self.len
    }
}

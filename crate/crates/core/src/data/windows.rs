use std::ops::Range;
use std::sync::Arc;

use crate::nn::Tensor;

use super::{DataError, TimeSeriesTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WindowSpec {
    pub seq_len: usize,
    pub horizon: usize,
    pub stride: usize,
}

/// Input windows with the targets that immediately follow them.
///
/// Inputs are views into a shared row-major `T × F` matrix, so window `i`
/// is the contiguous slice starting at row `starts[i]`.
#[derive(Clone, Debug)]
pub struct WindowBatch {
    series: Arc<Vec<f64>>,
    n_features: usize,
    seq_len: usize,
    horizon: usize,
    starts: Vec<usize>,
    targets: Vec<f64>,
    n_targets: usize,
    pub input_names: Vec<String>,
    pub target_names: Vec<String>,
}

/// Number of windows that fit into a segment of `len` rows.
pub fn window_count(len: usize, spec: WindowSpec) -> usize {
    if spec.stride == 0 || len < spec.seq_len + spec.horizon {
        0
    } else {
        (len - spec.seq_len - spec.horizon) / spec.stride + 1
    }
}

/// Windows lying entirely inside `range` of `table`; window `i` reads inputs
/// from `[range.start + i*stride, +seq_len)` and targets from the following
/// `horizon` rows.
pub fn make_windows(
    table: &TimeSeriesTable,
    inputs: &[String],
    targets: &[String],
    range: Range<usize>,
    spec: WindowSpec,
) -> Result<WindowBatch, DataError> {
    if spec.seq_len == 0 || spec.horizon == 0 || spec.stride == 0 {
        return Err(DataError::Config(
            "sequence length, horizon and stride must be positive".into(),
        ));
    }
    if range.end > table.len() || range.start > range.end {
        return Err(DataError::Range(format!(
            "segment {range:?} outside a table of {} rows",
            table.len()
        )));
    }
    let series = Arc::new(table.matrix(inputs)?);
    let target_idx = targets
        .iter()
        .map(|t| table.col_index(t))
        .collect::<Result<Vec<_>, _>>()?;
    let n = window_count(range.len(), spec);
    if n == 0 {
        log::warn!(
            "segment of {} rows is too short for windows of {} + {}",
            range.len(),
            spec.seq_len,
            spec.horizon
        );
    }
    let starts: Vec<usize> = (0..n).map(|i| range.start + i * spec.stride).collect();
    let mut target_values = Vec::with_capacity(n * spec.horizon * targets.len());
    for &s in &starts {
        for h in 0..spec.horizon {
            let row = s + spec.seq_len + h;
            target_values.extend(target_idx.iter().map(|&c| table.get(row, c)));
        }
    }
    Ok(WindowBatch {
        series,
        n_features: inputs.len(),
        seq_len: spec.seq_len,
        horizon: spec.horizon,
        starts,
        targets: target_values,
        n_targets: targets.len(),
        input_names: inputs.to_vec(),
        target_names: targets.to_vec(),
    })
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    /// Width of one target row: `horizon × targets`.
    pub fn target_width(&self) -> usize {
        self.horizon * self.n_targets
    }

    pub fn start(&self, i: usize) -> usize {
        self.starts[i]
    }

    /// Absolute index of the last input row of window `i`.
    pub fn end_index(&self, i: usize) -> usize {
        self.starts[i] + self.seq_len - 1
    }

    /// Absolute indices of the target rows of window `i`.
    pub fn target_rows(&self, i: usize) -> Range<usize> {
        let s = self.starts[i] + self.seq_len;
        s..s + self.horizon
    }

    /// Row-major `seq_len × features` input of window `i`.
    pub fn input(&self, i: usize) -> &[f64] {
        let s = self.starts[i] * self.n_features;
        &self.series[s..s + self.seq_len * self.n_features]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        let w = self.target_width();
        &self.targets[i * w..(i + 1) * w]
    }

    /// `[indices.len(), tail, features]` holding the last `tail` input steps
    /// of each selected window.
    pub fn gather_inputs(&self, indices: &[usize], tail: usize) -> Tensor {
        let tail = tail.min(self.seq_len);
        let f = self.n_features;
        let mut data = Vec::with_capacity(indices.len() * tail * f);
        for &i in indices {
            let w = self.input(i);
            data.extend_from_slice(&w[(self.seq_len - tail) * f..]);
        }
        Tensor::new(&[indices.len(), tail, f], data).expect("window shape")
    }

    /// `[indices.len(), horizon × targets]`.
    pub fn gather_targets(&self, indices: &[usize]) -> Tensor {
        let w = self.target_width();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.target(i));
        }
        Tensor::new(&[indices.len(), w], data).expect("target shape")
    }
}

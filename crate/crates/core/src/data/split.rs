use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{DataError, TimeSeriesTable};

pub const MIN_ROWS: usize = 10;

/// Chronological train / validation / test partition of `0..T`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl DatasetSplits {
    pub fn total(&self) -> usize {
        self.test.end
    }
}

/// 7:1:2 split with `floor` for train and validation; the remainder goes to test.
pub fn split(rows: usize) -> Result<DatasetSplits, DataError> {
    if rows < MIN_ROWS {
        return Err(DataError::TooSmall { rows, min: MIN_ROWS });
    }
    let train = rows * 7 / 10;
    let val = rows / 10;
    Ok(DatasetSplits {
        train: 0..train,
        val: train..train + val,
        test: train + val..rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    /// Train-range standard deviation fell below [`DEGENERATE_STD`].
    pub degenerate: bool,
}

pub const DEGENERATE_STD: f64 = 1e-12;

impl ColumnStats {
    pub fn apply(&self, v: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            (v - self.mean) / self.std
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        if self.degenerate {
            self.mean
        } else {
            z * self.std + self.mean
        }
    }
}

/// Per-column mean and population standard deviation over `rows` only.
pub fn column_stats(table: &TimeSeriesTable, rows: Range<usize>) -> Vec<ColumnStats> {
    let n = rows.len().max(1) as f64;
    table
        .columns()
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let mean = rows.clone().map(|r| table.get(r, c)).sum::<f64>() / n;
            let var = rows
                .clone()
                .map(|r| (table.get(r, c) - mean).powi(2))
                .sum::<f64>()
                / n;
            let std = var.sqrt();
            ColumnStats {
                name: name.clone(),
                mean,
                std,
                degenerate: std < DEGENERATE_STD,
            }
        })
        .collect()
}

/// Z-scores every column with statistics from the train range.
pub fn normalize(
    table: &TimeSeriesTable,
    splits: &DatasetSplits,
) -> (TimeSeriesTable, Vec<ColumnStats>) {
    let stats = column_stats(table, splits.train.clone());
    for s in stats.iter().filter(|s| s.degenerate) {
        log::warn!(
            "column {} is constant over the train range; normalized to zeros",
            s.name
        );
    }
    let mut out = table.clone();
    let f = table.n_cols();
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        *v = stats[i % f].apply(*v);
    }
    (out, stats)
}

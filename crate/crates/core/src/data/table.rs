use std::collections::HashSet;

use super::DataError;

/// Timestamped multivariate series, row-major `T × F`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesTable {
    timestamps: Vec<String>,
    columns: Vec<String>,
    values: Vec<f64>,
}

impl TimeSeriesTable {
    pub fn new(
        timestamps: Vec<String>,
        columns: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self, DataError> {
        if values.len() != timestamps.len() * columns.len() {
            return Err(DataError::Shape(format!(
                "{} values for {} rows × {} columns",
                values.len(),
                timestamps.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c) {
                return Err(DataError::DuplicateColumn(c.clone()));
            }
        }
        Ok(Self {
            timestamps,
            columns,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn timestamps(&self) -> &[String] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn col_index(&self, name: &str) -> Result<usize, DataError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_owned()))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.columns.len() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let f = self.columns.len();
        self.values[row * f + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let f = self.columns.len();
        &self.values[row * f..(row + 1) * f]
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, DataError> {
        let c = self.col_index(name)?;
        Ok((0..self.len()).map(|r| self.get(r, c)).collect())
    }

    /// Row-major `T × names.len()` matrix of the named columns.
    pub fn matrix(&self, names: &[String]) -> Result<Vec<f64>, DataError> {
        let idx = names
            .iter()
            .map(|n| self.col_index(n))
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = Vec::with_capacity(self.len() * idx.len());
        for r in 0..self.len() {
            let row = self.row(r);
            out.extend(idx.iter().map(|&c| row[c]));
        }
        Ok(out)
    }

    /// New table with only `names`, in that order.
    pub fn select(&self, names: &[String]) -> Result<Self, DataError> {
        let values = self.matrix(names)?;
        Self::new(self.timestamps.clone(), names.to_vec(), values)
    }

    /// Like [`select`](Self::select), but each name may also match a header
    /// with its unit suffix stripped; the result uses the requested names.
    pub fn select_resolved(&self, names: &[String]) -> Result<Self, DataError> {
        let idx = names
            .iter()
            .map(|n| super::resolve_column(&self.columns, n))
            .collect::<Result<Vec<_>, _>>()?;
        let mut values = Vec::with_capacity(self.len() * idx.len());
        for r in 0..self.len() {
            let row = self.row(r);
            values.extend(idx.iter().map(|&c| row[c]));
        }
        Self::new(self.timestamps.clone(), names.to_vec(), values)
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self, DataError> {
        if start > end || end > self.len() {
            return Err(DataError::Range(format!(
                "rows {start}:{end} outside a table of {} rows",
                self.len()
            )));
        }
        let f = self.columns.len();
        Self::new(
            self.timestamps[start..end].to_vec(),
            self.columns.clone(),
            self.values[start * f..end * f].to_vec(),
        )
    }
}

//! Results tables across runs, per-epoch curve logs, and the entropy
//! diagnostic used by the command-line front end.

mod curves;
mod table;

pub use curves::{CurveLog, CurveRow, CURVE_HEADER};
pub use table::{mean_std, Cell, ResultsTable, TableRow};

use std::path::Path;

use crate::data::{
    discretize, entropy_check, load_weather_csv, resolve_column, split, synth, BadRowPolicy, DataError, EntropyTriple, TimeSeriesTable,
};

/// Plug-in entropies of two columns over the train split, each discretized
/// into `bins` equal-frequency bins.
pub fn entropy_diagnostic(table: &TimeSeriesTable, x: &str, y: &str, bins: usize) -> Result<EntropyTriple, DataError> {
    if bins == 0 {
        return Err(DataError::Config("bin count must be positive".into()));
    }
    let train = split(table.len())?.train;
    let col = |name: &str| -> Result<Vec<usize>, DataError> {
        let k = resolve_column(table.columns(), name)?;
        let c: Vec<f64> = train.clone().map(|r| table.get(r, k)).collect();
        Ok(discretize(&c, bins))
    };
    entropy_check(&col(x)?, &col(y)?)
}

/// Loads two columns from a CSV, or from the synthetic generator when `path`
/// is `None`, and runs [`entropy_diagnostic`].
pub fn entropy_from_source(
    path: Option<&Path>,
    synthetic_rows: usize,
    x: &str,
    y: &str,
    bins: usize,
) -> Result<EntropyTriple, DataError> {
    let cols: Vec<String> = if x == y { vec![x.into()] } else { vec![x.into(), y.into()] };
    let table = match path {
        Some(p) => load_weather_csv(p, &cols, None, BadRowPolicy::Reject)?.0,
        None => synth::generate_weather(synthetic_rows, 0)?.select_resolved(&cols)?,
    };
    entropy_diagnostic(&table, x, y, bins)
}

/// One-line verdict on the subadditivity gap.
pub fn entropy_verdict(e: &EntropyTriple) -> &'static str {
    if e.is_correlated() {
        "correlated: H(x,y) < H(x)+H(y)"
    } else {
        "independent: H(x,y) = H(x)+H(y)"
    }
}

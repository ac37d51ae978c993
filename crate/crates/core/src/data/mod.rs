//! Weather-table ingestion, splitting, normalization, windowing, client
//! feature assignment, and the plug-in entropy diagnostic.

mod entropy;
mod features;
mod loader;
mod split;
pub mod synth;
mod table;
mod windows;


pub use entropy::{discretize, entropy_check, EntropyTriple};
pub use features::{assign_features, FeatureAssignment, Setting};
pub use loader::{
    csv_columns, load_weather_csv, resolve_column, short_name, write_csv, BadRowPolicy, LoadStats,
};
pub use split::{column_stats, normalize, split, ColumnStats, DatasetSplits, DEGENERATE_STD, MIN_ROWS};
pub use table::TimeSeriesTable;
pub use windows::{make_windows, window_count, WindowBatch, WindowSpec};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("line {line}: {reason}")]
    BadRow { line: usize, reason: String },
    #[error("table has {rows} rows, at least {min} required")]
    TooSmall { rows: usize, min: usize },
    #[error("range error: {0}")]
    Range(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

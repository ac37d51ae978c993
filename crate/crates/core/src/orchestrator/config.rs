use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{assign_features, BadRowPolicy, Setting};
use crate::server::EncoderConfig;

use super::OrchestratorError;

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "CORAST_DATA_DIR";
/// File looked up in the data directory when no path is configured.
pub const DEFAULT_DATA_FILE: &str = "weather.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    NoFm,
    CorastRho,
    Corast,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::NoFm, Variant::CorastRho, Variant::Corast];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::NoFm => "no-fm",
            Variant::CorastRho => "corast-rho",
            Variant::Corast => "corast",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::NoFm => "No FM",
            Variant::CorastRho => "CoRAST-rho",
            Variant::Corast => "CoRAST",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = OrchestratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| OrchestratorError::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Every client forecasts the configured target column.
    H2coForecast,
    /// Every client forecasts its own input columns.
    LocalForecast,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::H2coForecast => "h2co-forecast",
            Task::LocalForecast => "local-forecast",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Half-open row range written as `"start:end"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RowRange {
    pub start: usize,
    pub end: usize,
}

impl RowRange {
    pub fn range(self) -> Range<usize> {
        self.start..self.end
    }
}

impl FromStr for RowRange {
    type Err = OrchestratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || OrchestratorError::Config(format!("row range {s:?} is not of the form start:end"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let start = a.trim().parse().map_err(|_| bad())?;
        let end = b.trim().parse().map_err(|_| bad())?;
        if start >= end {
            return Err(OrchestratorError::Config(format!("row range {s:?} is empty")));
        }
        Ok(Self { start, end })
    }
}

impl TryFrom<String> for RowRange {
    type Error = OrchestratorError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<RowRange> for String {
    fn from(r: RowRange) -> String {
        format!("{}:{}", r.start, r.end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Weather CSV; when absent the synthetic generator is used.
    pub path: Option<PathBuf>,
    pub rows: Option<RowRange>,
    pub synthetic_rows: usize,
    pub synthetic_seed: u64,
    pub target: String,
    pub server_columns: Option<Vec<String>>,
    pub train_stride: usize,
    pub eval_stride: usize,
    pub horizon: usize,
    pub bad_rows: BadRowPolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            rows: None,
            synthetic_rows: crate::data::synth::DEFAULT_ROWS,
            synthetic_seed: 0,
            target: "H2OC".into(),
            server_columns: None,
            train_stride: 1,
            eval_stride: 1,
            horizon: 1,
            bad_rows: BadRowPolicy::Reject,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub server_interval: usize,
    pub client_interval: usize,
    pub rounds: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            server_interval: 1,
            client_interval: 1,
            rounds: 1,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.client_interval == 0 || self.server_interval < self.client_interval || self.rounds == 0 {
            return Err(OrchestratorError::Config(format!(
                "schedule needs server_interval >= client_interval >= 1 and rounds >= 1, got {} / {} / {}",
                self.server_interval, self.client_interval, self.rounds
            )));
        }
        Ok(())
    }
}

/// Settings shared by every client of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientSettings {
    pub seq_len: usize,
    pub depth: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub lr: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
}

impl Default for ClientSettings {
    fn default() -> Self {
        let c = crate::client::ClientConfig::default();
        Self {
            seq_len: c.seq_len,
            depth: c.depth,
            kernel: c.kernel,
            hidden: c.hidden,
            lr: c.lr,
            patience: c.patience,
            batch_size: c.batch_size,
            max_epochs: c.max_epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub setting: Setting,
    pub variant: Variant,
    pub task: Task,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Train clients of a round on separate threads.
    #[serde(default = "default_true")]
    pub parallel: bool,
    /// Replaces the setting's client feature lists when present.
    #[serde(default)]
    pub client_features: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub client: ClientSettings,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(setting: Setting, variant: Variant, task: Task) -> Self {
        Self {
            name: String::new(),
            setting,
            variant,
            task,
            seeds: default_seeds(),
            parallel: true,
            client_features: None,
            data: DataConfig::default(),
            schedule: ScheduleConfig::default(),
            encoder: EncoderConfig::default(),
            client: ClientSettings::default(),
        }
    }

    /// Run identifier used in output rows.
    pub fn run_id(&self) -> String {
        if self.name.is_empty() {
            format!("{}-{}-{}", self.setting, self.variant, self.task)
        } else {
            self.name.clone()
        }
    }

    /// Columns the server encoder trains on, or `None` without a server.
    pub fn server_columns(&self) -> Option<Vec<String>> {
        match self.variant {
            Variant::NoFm => None,
            Variant::CorastRho => Some(vec!["rho".into()]),
            Variant::Corast => Some(
                self.data
                    .server_columns
                    .clone()
                    .unwrap_or_else(|| assign_features(self.setting).server),
            ),
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        if self.data.server_columns.is_some() && self.variant != Variant::Corast {
            return bad(format!(
                "data.server_columns contradicts variant {}, which fixes the server columns",
                self.variant
            ));
        }
        if let Some(cols) = &self.data.server_columns {
            if cols.is_empty() {
                return bad("data.server_columns must not be empty".into());
            }
        }
        if let Some(clients) = &self.client_features {
            if clients.is_empty() || clients.iter().any(|c| c.is_empty()) {
                return bad("client_features must list at least one nonempty client".into());
            }
            let mut ids: Vec<String> = clients.iter().map(|c| c.join("+")).collect();
            ids.sort();
            ids.dedup();
            if ids.len() != clients.len() {
                return bad("client_features lists the same client twice".into());
            }
        }
        if self.data.train_stride == 0 || self.data.eval_stride == 0 || self.data.horizon == 0 {
            return bad("data strides and horizon must be positive".into());
        }
        if self.data.target.is_empty() {
            return bad("data.target must name a column".into());
        }
        self.schedule.validate()?;
        self.encoder
            .validate()
            .map_err(|e| OrchestratorError::Config(e.to_string()))?;
        if self.client.max_epochs == 0 {
            return bad("client.max_epochs must be positive".into());
        }
        Ok(())
    }
}

/// Command-line values that replace file values.
#[derive(Clone, Debug, Default)]
pub struct ConfigOverrides {
    pub seeds: Option<Vec<u64>>,
    pub rows: Option<RowRange>,
    pub data: Option<PathBuf>,
}

/// Resolves a data path: relative paths are taken inside the data directory
/// when [`DATA_DIR_ENV`] is set; with no path configured, that directory's
/// [`DEFAULT_DATA_FILE`] is used if present.
pub fn resolve_data_path(path: Option<&Path>, data_dir: Option<&Path>) -> Option<PathBuf> {
    match (path, data_dir) {
        (Some(p), Some(dir)) if p.is_relative() => Some(dir.join(p)),
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(dir)) => {
            let candidate = dir.join(DEFAULT_DATA_FILE);
            candidate.is_file().then_some(candidate)
        }
        (None, None) => None,
    }
}

/// Parses a TOML experiment description, applies overrides and defaults,
/// and validates the result.
pub fn parse_config_str(text: &str, overrides: &ConfigOverrides) -> Result<ExperimentConfig, OrchestratorError> {
    let mut config: ExperimentConfig =
        toml::from_str(text).map_err(|e| OrchestratorError::Config(e.message().to_owned()))?;
    if let Some(seeds) = &overrides.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(rows) = overrides.rows {
        config.data.rows = Some(rows);
    }
    if let Some(path) = &overrides.data {
        config.data.path = Some(path.clone());
    }
    let dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    config.data.path = resolve_data_path(config.data.path.as_deref(), dir.as_deref());
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path, overrides: &ConfigOverrides) -> Result<ExperimentConfig, OrchestratorError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text, overrides)
}

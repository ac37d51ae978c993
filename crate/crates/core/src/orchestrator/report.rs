use serde::{Deserialize, Serialize};

use crate::client::{EpochRecord, EvalReport};
use crate::data::Setting;

use super::message::{KindTotals, TraceEntry};
use super::{ExperimentConfig, Task, Variant};

/// Parameter counts of the reference layout quoted alongside ours.
pub const REFERENCE_SERVER_PARAMETERS: usize = 337_152;
pub const REFERENCE_CLIENT_PARAMETERS: [usize; 4] = [12_970, 13_450, 13_984, 15_214];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub rows: usize,
    pub train: (usize, usize),
    pub val: (usize, usize),
    pub test: (usize, usize),
    pub rows_dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerRun {
    pub columns: Vec<String>,
    pub version: u64,
    /// Loss per pretraining iteration, concatenated over server updates.
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRun {
    pub id: String,
    pub inputs: Vec<String>,
    pub targets: Vec<String>,
    pub parameters: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
    /// Epoch records over all client updates, numbered consecutively.
    pub records: Vec<EpochRecord>,
    /// Test error in normalized units.
    pub test: EvalReport,
    /// Test error in the original units of each target.
    pub test_original_units: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub server: Option<ServerRun>,
    pub clients: Vec<ClientRun>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub server: Option<usize>,
    pub clients: Vec<(String, usize)>,
    pub reference_server: usize,
    pub reference_clients: Vec<usize>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageSummary {
    pub totals: Vec<KindTotals>,
    pub total_bytes: usize,
    pub trace: Vec<TraceEntry>,
}

/// Everything a run produced, minus wall-clock timings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub setting: Setting,
    pub variant: Variant,
    pub task: Task,
    pub data: DataSummary,
    pub parameters: ParameterSummary,
    pub seeds: Vec<SeedReport>,
    /// Messages of the first seed; every seed follows the same protocol.
    pub messages: MessageSummary,
    pub config: ExperimentConfig,
}

impl RunReport {
    /// Mean over seeds of each client's overall test error, by client id.
    pub fn client_means(&self) -> Vec<(String, f64)> {
        let Some(first) = self.seeds.first() else {
            return Vec::new();
        };
        first
            .clients
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let vals: Vec<f64> = self.seeds.iter().map(|s| s.clients[k].test.overall).collect();
                (c.id.clone(), vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    /// Per-seed test error of one variable: the mean over every client
    /// forecasting it.
    pub fn variable_scores(&self, variable: &str) -> Vec<f64> {
        self.seeds
            .iter()
            .filter_map(|s| {
                let v: Vec<f64> = s.clients.iter().filter_map(|c| c.test.get(variable)).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }

    /// Per-seed test error averaged over clients.
    pub fn seed_scores(&self) -> Vec<f64> {
        self.seeds
            .iter()
            .map(|s| s.clients.iter().map(|c| c.test.overall).sum::<f64>() / s.clients.len().max(1) as f64)
            .collect()
    }

    /// Target variables in first-appearance order.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        if let Some(s) = self.seeds.first() {
            for c in &s.clients {
                for (v, _) in &c.test.per_variable {
                    if !out.contains(v) {
                        out.push(v.clone());
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub pretrain_secs: f64,
    pub clients_secs: f64,
    pub evaluate_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTimings {
    pub load_secs: f64,
    pub seeds: Vec<SeedTiming>,
    pub total_secs: f64,
}

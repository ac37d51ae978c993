//! Experiment driver: server pretraining, representation delivery, client
//! training rounds, evaluation and reporting.

mod align;
mod config;
mod message;
mod report;
mod run;
mod schedule;

use thiserror::Error;

use crate::client::ClientError;
use crate::data::DataError;
use crate::server::ServerError;

pub use align::align_representations;
pub use config::{
    parse_config, parse_config_str, resolve_data_path, ClientSettings, ConfigOverrides, DataConfig,
    ExperimentConfig, RowRange, ScheduleConfig, Task, Variant, DATA_DIR_ENV, DEFAULT_DATA_FILE,
};
pub use message::{
    deserialize_message, frame_len, serialize_message, Endpoint, KindTotals, Message, MessageBus, MessageKind,
    TraceEntry, HEADER_BYTES,
};
pub use report::{
    ClientRun, DataSummary, MessageSummary, ParameterSummary, RunReport, RunTimings, SeedReport, SeedTiming,
    ServerRun, REFERENCE_CLIENT_PARAMETERS, REFERENCE_SERVER_PARAMETERS,
};
pub use run::{
    client_configs, participant_rng, prepare_data, run_experiment, CurveEvent, EncoderCache, PreparedData,
    RunOutput, Runner,
};
pub use schedule::{broadcast_rounds, is_one_directional, schedule_rounds, simulate_schedule, RoundActions};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("window {window} ends at time {time}, outside the representation range [{start}, {end})")]
    Alignment {
        window: usize,
        time: usize,
        start: usize,
        end: usize,
    },
    #[error("message decode error: {0}")]
    Decode(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("seed {seed}, {client}, {phase}: {source}")]
    Context {
        seed: u64,
        client: String,
        phase: String,
        #[source]
        source: Box<OrchestratorError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

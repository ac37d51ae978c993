use std::fs::{File, OpenOptions};
use std::io;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::orchestrator::CurveEvent;

pub const CURVE_HEADER: [&str; 6] = ["run_id", "seed", "client", "epoch", "split", "loss"];

/// One line of the curve log, as read back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub run_id: String,
    pub seed: u64,
    pub client: String,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
}

/// Append-only CSV of per-epoch losses, flushed after every row so a crashed
/// run keeps what it logged.
pub struct CurveLog {
    writer: Mutex<csv::Writer<File>>,
}

impl CurveLog {
    /// Opens `path` for appending, writing the header if the file is new or empty.
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let fresh = file.metadata()?.len() == 0;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer.write_record(CURVE_HEADER)?;
            writer.flush()?;
        }
        Ok(Self { writer: Mutex::new(writer) })
    }

    pub fn record(&self, e: &CurveEvent<'_>) -> io::Result<()> {
        let mut w = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        w.write_record([
            e.run_id,
            &e.seed.to_string(),
            e.client,
            &e.epoch.to_string(),
            e.split,
            &format!("{}", e.loss),
        ])?;
        w.flush()
    }

    pub fn read(path: &Path) -> io::Result<Vec<CurveRow>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(io::Error::from)).collect()
    }
}

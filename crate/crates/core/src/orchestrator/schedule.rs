use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::message::{frame_len, Endpoint, MessageBus, MessageKind, TraceEntry};
use super::{OrchestratorError, ScheduleConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundActions {
    pub round: usize,
    pub server_update: bool,
    pub clients_update: bool,
    /// A fresh representation is sent only when the server model changed.
    pub broadcast: bool,
}

pub fn schedule_rounds(schedule: &ScheduleConfig, round: usize) -> RoundActions {
    let server_update = round % schedule.server_interval.max(1) == 0;
    RoundActions {
        round,
        server_update,
        clients_update: round % schedule.client_interval.max(1) == 0,
        broadcast: server_update,
    }
}

/// Drives the message protocol alone for `rounds` rounds with `clients`
/// recipients and returns the server-update rounds with the bus.
pub fn simulate_schedule(
    schedule: &ScheduleConfig,
    clients: usize,
    dim: usize,
    span: usize,
) -> Result<(BTreeSet<usize>, MessageBus), OrchestratorError> {
    schedule.validate()?;
    let mut bus = MessageBus::new();
    let mut updates = BTreeSet::new();
    let mut version = 0;
    for r in 0..schedule.rounds {
        let act = schedule_rounds(schedule, r);
        if act.server_update {
            version += 1;
            updates.insert(r);
        }
        if act.broadcast {
            for c in 0..clients {
                bus.record(r, Endpoint::Client(c), MessageKind::ServerModelUpdated, version, 1, frame_len(0, 0))?;
                bus.record(r, Endpoint::Client(c), MessageKind::ReprTrainingMatrix, version, 1, frame_len(dim, span))?;
            }
        }
    }
    Ok((updates, bus))
}

/// Rounds in which a representation matrix was delivered.
pub fn broadcast_rounds(trace: &[TraceEntry]) -> BTreeSet<usize> {
    trace
        .iter()
        .filter(|t| t.kind == MessageKind::ReprTrainingMatrix)
        .map(|t| t.round)
        .collect()
}

/// True when no trace entry is addressed to the server.
pub fn is_one_directional(trace: &[TraceEntry]) -> bool {
    trace
        .iter()
        .all(|t| t.from == Endpoint::Server && t.to != Endpoint::Server)
}

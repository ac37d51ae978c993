//! Server-to-client messages, their binary framing, and an in-process bus
//! that records every delivery.
//!
//! Frame layout (little-endian):
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 4     | length of everything after this field   |
//! | 1     | kind                                    |
//! | 8     | model version                           |
//! | 4     | `d`                                     |
//! | 4     | `T`                                     |
//! | 8     | first absolute time index               |
//! | 8·d·T | values, `d × T` row-major `f64`         |

use serde::{Deserialize, Serialize};

use crate::server::ReprMatrix;

use super::OrchestratorError;

/// Fixed bytes before the payload.
pub const HEADER_BYTES: usize = 4 + 1 + 8 + 4 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    ReprTrainingMatrix,
    ReprInferenceVector,
    ServerModelUpdated,
}

impl MessageKind {
    pub const ALL: [MessageKind; 3] = [
        MessageKind::ReprTrainingMatrix,
        MessageKind::ReprInferenceVector,
        MessageKind::ServerModelUpdated,
    ];

    fn code(self) -> u8 {
        match self {
            MessageKind::ReprTrainingMatrix => 1,
            MessageKind::ReprInferenceVector => 2,
            MessageKind::ServerModelUpdated => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    /// Every kind flows from the server to clients.
    pub fn sender(self) -> Endpoint {
        Endpoint::Server
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Server,
    Client(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    ReprTrainingMatrix(ReprMatrix),
    ReprInferenceVector(ReprMatrix),
    ServerModelUpdated { version: u64 },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::ReprTrainingMatrix(_) => MessageKind::ReprTrainingMatrix,
            Message::ReprInferenceVector(_) => MessageKind::ReprInferenceVector,
            Message::ServerModelUpdated { .. } => MessageKind::ServerModelUpdated,
        }
    }

    pub fn version(&self) -> u64 {
        match self {
            Message::ReprTrainingMatrix(m) | Message::ReprInferenceVector(m) => m.version,
            Message::ServerModelUpdated { version } => *version,
        }
    }

    /// Size of the serialized frame.
    pub fn encoded_len(&self) -> usize {
        match self {
            Message::ReprTrainingMatrix(m) | Message::ReprInferenceVector(m) => {
                HEADER_BYTES + m.payload_bytes()
            }
            Message::ServerModelUpdated { .. } => HEADER_BYTES,
        }
    }
}

/// Frame size of a representation message without building it.
pub fn frame_len(dim: usize, len: usize) -> usize {
    HEADER_BYTES + 8 * dim * len
}

pub fn serialize_message(msg: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(msg.encoded_len());
    out.extend_from_slice(&((msg.encoded_len() - 4) as u32).to_le_bytes());
    out.push(msg.kind().code());
    out.extend_from_slice(&msg.version().to_le_bytes());
    match msg {
        Message::ReprTrainingMatrix(m) | Message::ReprInferenceVector(m) => {
            out.extend_from_slice(&(m.dim as u32).to_le_bytes());
            out.extend_from_slice(&(m.len as u32).to_le_bytes());
            out.extend_from_slice(&(m.start as u64).to_le_bytes());
            for v in &m.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Message::ServerModelUpdated { .. } => {
            out.extend_from_slice(&[0; 16]);
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], OrchestratorError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            OrchestratorError::Decode(format!(
                "frame truncated: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, OrchestratorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, OrchestratorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn deserialize_message(bytes: &[u8]) -> Result<Message, OrchestratorError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let body = c.u32()? as usize;
    if body != bytes.len() - 4 {
        return Err(OrchestratorError::Decode(format!(
            "frame announces {body} bytes but carries {}",
            bytes.len() - 4
        )));
    }
    let code = c.take(1)?[0];
    let kind = MessageKind::from_code(code)
        .ok_or_else(|| OrchestratorError::Decode(format!("unknown message kind {code}")))?;
    let version = c.u64()?;
    let dim = c.u32()? as usize;
    let len = c.u32()? as usize;
    let start = c.u64()? as usize;
    let expected = dim
        .checked_mul(len)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| OrchestratorError::Decode(format!("payload size {dim} × {len} overflows")))?;
    if c.buf.len() - c.pos != expected {
        return Err(OrchestratorError::Decode(format!(
            "payload of {} bytes for a {dim} × {len} matrix",
            c.buf.len() - c.pos
        )));
    }
    let values: Vec<f64> = c
        .take(expected)?
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let matrix = || {
        ReprMatrix::new(version, dim, start, len, values.clone())
            .map_err(|e| OrchestratorError::Decode(e.to_string()))
    };
    match kind {
        MessageKind::ReprTrainingMatrix => Ok(Message::ReprTrainingMatrix(matrix()?)),
        MessageKind::ReprInferenceVector => Ok(Message::ReprInferenceVector(matrix()?)),
        MessageKind::ServerModelUpdated => {
            if dim != 0 || len != 0 || start != 0 {
                return Err(OrchestratorError::Decode(
                    "model-update notice carries a payload".into(),
                ));
            }
            Ok(Message::ServerModelUpdated { version })
        }
    }
}

/// One line of the delivery trace: `count` messages of one kind delivered to
/// one recipient in one round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub round: usize,
    pub kind: MessageKind,
    pub from: Endpoint,
    pub to: Endpoint,
    pub version: u64,
    pub count: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindTotals {
    pub kind: MessageKind,
    pub messages: usize,
    pub bytes: usize,
}

/// In-process transport. Delivery is recorded, not copied: recipients read
/// the payload from the sender's shared buffer.
#[derive(Clone, Debug, Default)]
pub struct MessageBus {
    trace: Vec<TraceEntry>,
}

impl MessageBus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records delivery of `msg` to `to`.
    pub fn send(&mut self, round: usize, to: Endpoint, msg: &Message) -> Result<(), OrchestratorError> {
        self.record(round, to, msg.kind(), msg.version(), 1, msg.encoded_len())
    }

    /// Records `count` messages of `frame_bytes` each.
    pub fn record(
        &mut self,
        round: usize,
        to: Endpoint,
        kind: MessageKind,
        version: u64,
        count: usize,
        frame_bytes: usize,
    ) -> Result<(), OrchestratorError> {
        let from = kind.sender();
        if from == to || to == Endpoint::Server {
            return Err(OrchestratorError::Protocol(format!(
                "{kind:?} cannot be delivered from {from:?} to {to:?}"
            )));
        }
        self.trace.push(TraceEntry {
            round,
            kind,
            from,
            to,
            version,
            count,
            bytes: count * frame_bytes,
        });
        Ok(())
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<TraceEntry> {
        self.trace
    }

    pub fn total_bytes(&self) -> usize {
        self.trace.iter().map(|t| t.bytes).sum()
    }

    pub fn totals(&self) -> Vec<KindTotals> {
        MessageKind::ALL
            .into_iter()
            .map(|k| {
                let it = self.trace.iter().filter(|t| t.kind == k);
                KindTotals {
                    kind: k,
                    messages: it.clone().map(|t| t.count).sum(),
                    bytes: it.map(|t| t.bytes).sum(),
                }
            })
            .collect()
    }
}

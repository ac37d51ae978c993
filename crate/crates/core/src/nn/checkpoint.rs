//! Parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"CRSTCKPT"  u32 format version  u32 header length  header (UTF-8 JSON)
//! f64 values, parameter by parameter in header order, each row-major
//! ```
//!
//! The header is `{"meta": <any>, "params": [{"name": .., "shape": [..]}, ..]}`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{NnError, ParameterSet, Tensor};

const MAGIC: &[u8; 8] = b"CRSTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    params: Vec<Entry>,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    params: &ParameterSet,
    meta: &serde_json::Value,
) -> Result<(), NnError> {
    let header = Header {
        meta: meta.clone(),
        params: params
            .layout()
            .into_iter()
            .map(|(name, shape)| Entry { name, shape })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for id in params.ids() {
        for v in params.value(id).data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ParameterSet, serde_json::Value), NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported format version {version}")));
    }
    r.read_exact(&mut word)?;
    let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut header)?;
    let header: Header =
        serde_json::from_slice(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut params = ParameterSet::new();
    let mut buf = [0u8; 8];
    for entry in header.params {
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        params.add(&entry.name, Tensor::new(&entry.shape, data)?)?;
    }
    Ok((params, header.meta))
}

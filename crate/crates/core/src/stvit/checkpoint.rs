//! Binary parameter checkpoints.
//!
//! ```text
//! "STVT1"
//! u32 LE  JSON length, then the JSON header {config, norm_stats, meta}
//! repeated until EOF:
//!   u32 LE name length, UTF-8 name
//!   u32 LE rank, rank × u64 LE dims
//!   prod(dims) × f64 LE values
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{StVitConfig, StVitParams};
use super::StVitError;
use crate::dataset::NormStats;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"STVT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: StVitConfig,
    pub norm_stats: Option<NormStats>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: StVitParams,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let json = serde_json::to_vec(&ck.header).expect("header serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (name, t) in ck.params.named() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], StVitError> {
        if self.pos + n > self.bytes.len() {
            return Err(StVitError::Checkpoint(format!("truncated {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, StVitError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, StVitError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, StVitError> {
    let mut rd = Reader { bytes, pos: 0 };
    if rd.take(5, "magic")? != CHECKPOINT_MAGIC {
        return Err(StVitError::Checkpoint("bad magic".into()));
    }
    let json_len = rd.u32("header length")? as usize;
    let header: CheckpointHeader = serde_json::from_slice(rd.take(json_len, "header")?)
        .map_err(|e| StVitError::Checkpoint(format!("header: {e}")))?;
    header.config.validate()?;
    let mut params = StVitParams::zeros(&header.config);
    let expected: Vec<(String, Vec<usize>)> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.shape.clone()))
        .collect();
    for ((name, shape), t) in expected.iter().zip(params.tensors_mut()) {
        let n = rd.u32("name length")? as usize;
        let found = std::str::from_utf8(rd.take(n, "name")?)
            .map_err(|_| StVitError::Checkpoint("tensor name is not UTF-8".into()))?;
        if found != name {
            return Err(StVitError::Checkpoint(format!("expected tensor `{name}`, found `{found}`")));
        }
        let rank = rd.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(rd.u64("dims")? as usize);
        }
        if &dims != shape {
            return Err(StVitError::Checkpoint(format!("tensor `{name}` has shape {dims:?}, expected {shape:?}")));
        }
        for v in t.data.iter_mut() {
            *v = f64::from_le_bytes(rd.take(8, name)?.try_into().unwrap());
        }
    }
    if rd.pos != bytes.len() {
        return Err(StVitError::Checkpoint(format!("{} trailing bytes", bytes.len() - rd.pos)));
    }
    Ok(Checkpoint { header, params })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<(), StVitError> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ck)).map_err(|e| StVitError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, StVitError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| StVitError::Io(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

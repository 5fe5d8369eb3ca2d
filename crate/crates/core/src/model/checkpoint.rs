//! Binary checkpoint container.
//!
//! ```text
//! magic      8 bytes   "RALSTMCK"
//! version    u32 LE
//! header_len u32 LE
//! header     JSON      {"config": ModelConfig, "vocab_hash": hex, "num_params": k}
//! k times:
//!   name_len u32 LE, name (UTF-8)
//!   rank     u32 LE, dims (u64 LE each)
//!   data     f64 LE, row-major
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

use super::{Model, ModelConfig};

pub const MAGIC: &[u8; 8] = b"RALSTMCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub num_params: usize,
}

pub fn encode(model: &Model, vocab_hash: &str) -> Vec<u8> {
    let header = CheckpointHeader {
        config: model.config.clone(),
        vocab_hash: vocab_hash.to_string(),
        num_params: model.params.len(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 8 * model.params.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_exact(r: &mut Cursor<&[u8]>, n: usize, what: &str) -> Result<Vec<u8>> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if n > remaining {
        return Err(bad(format!("truncated while reading {what}")));
    }
    let mut buf = vec![0; n];
    r.read_exact(&mut buf).map_err(|_| bad(format!("truncated while reading {what}")))?;
    Ok(buf)
}

fn read_u32(r: &mut Cursor<&[u8]>, what: &str) -> Result<u32> {
    let b = read_exact(r, 4, what)?;
    Ok(u32::from_le_bytes(b.try_into().unwrap()))
}

fn read_u64(r: &mut Cursor<&[u8]>, what: &str) -> Result<u64> {
    let b = read_exact(r, 8, what)?;
    Ok(u64::from_le_bytes(b.try_into().unwrap()))
}

/// Parses a checkpoint. Returns the header and the rebuilt model.
pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, Model)> {
    let mut r = Cursor::new(bytes);
    if read_exact(&mut r, 8, "magic")? != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = read_u32(&mut r, "version")?;
    if version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let len = read_u32(&mut r, "header length")? as usize;
    let header: CheckpointHeader = serde_json::from_slice(&read_exact(&mut r, len, "header")?)
        .map_err(|e| bad(format!("header: {e}")))?;
    let mut store = ParamStore::new();
    for _ in 0..header.num_params {
        let name_len = read_u32(&mut r, "name length")? as usize;
        let name = String::from_utf8(read_exact(&mut r, name_len, "name")?)
            .map_err(|_| bad("parameter name is not UTF-8"))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r, "dimension")? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = read_exact(&mut r, count.saturating_mul(8), &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.register(&name, Tensor::new(shape, data)?)?;
    }
    if (r.position() as usize) != bytes.len() {
        return Err(bad("trailing bytes after last tensor"));
    }
    let model = Model::from_params(header.config.clone(), store)?;
    Ok((header, model))
}

pub fn save(path: &Path, model: &Model, vocab_hash: &str) -> Result<()> {
    // Write-then-rename so a crash never leaves a half-written best model.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(model, vocab_hash)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, Model)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads a checkpoint and refuses it unless it was trained with the
/// vocabulary whose hash is `vocab_hash`.
pub fn load_for_vocab(path: &Path, vocab_hash: &str) -> Result<Model> {
    let (header, model) = load(path)?;
    if header.vocab_hash != vocab_hash {
        return Err(Error::VocabMismatch {
            expected: header.vocab_hash,
            found: vocab_hash.to_string(),
        });
    }
    Ok(model)
}

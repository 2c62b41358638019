//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "FMAPCKPT"
//! version  u32
//! meta     u32 length + UTF-8 text, one `key=value` per line
//! count    u32
//! tensors  count x { u32 name length, name, u64 rows, u64 cols, rows*cols f64 }
//! ```
//!
//! The meta block holds the agent configuration; keys starting with
//! `run.` carry caller data such as the training step.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Agent, AgentConfig, AgentError};
use crate::numerics::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FMAPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const EXTRA_PREFIX: &str = "run.";

pub fn save_checkpoint(path: &Path, agent: &Agent, extra: &[(String, String)]) -> Result<(), AgentError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut out, agent, extra)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Agent, Vec<(String, String)>), AgentError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

pub fn write_checkpoint(out: &mut impl Write, agent: &Agent, extra: &[(String, String)]) -> Result<(), AgentError> {
    let mut meta = String::new();
    for (k, v) in agent.config.to_pairs() {
        meta.push_str(&format!("{k}={v}\n"));
    }
    for (k, v) in extra {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(AgentError::Checkpoint(format!("meta entry {k:?} not representable")));
        }
        meta.push_str(&format!("{EXTRA_PREFIX}{k}={v}\n"));
    }
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(meta.len() as u32).to_le_bytes())?;
    out.write_all(meta.as_bytes())?;
    out.write_all(&(agent.params.len() as u32).to_le_bytes())?;
    for (_, name, t) in agent.params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rows() as u64).to_le_bytes())?;
        out.write_all(&(t.cols() as u64).to_le_bytes())?;
        for x in t.data() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> AgentError {
    AgentError::Checkpoint(msg.into())
}

fn read_u32(r: &mut impl Read) -> Result<u32, AgentError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, AgentError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, len: usize) -> Result<String, AgentError> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    String::from_utf8(b).map_err(|_| bad("invalid UTF-8"))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(Agent, Vec<(String, String)>), AgentError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = read_u32(r)? as usize;
    let meta = read_string(r, len)?;
    let mut config = Vec::new();
    let mut extra = Vec::new();
    for line in meta.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("meta line {line:?}")))?;
        match k.strip_prefix(EXTRA_PREFIX) {
            Some(k) => extra.push((k.to_string(), v.to_string())),
            None => config.push((k.to_string(), v.to_string())),
        }
    }
    let mut agent = Agent::new(AgentConfig::from_pairs(&config)?, 0)?;
    let count = read_u32(r)? as usize;
    if count != agent.params.len() {
        return Err(bad(format!("{count} tensors, layout has {}", agent.params.len())));
    }
    let mut params: ParamSet = (*agent.params).clone();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let name = read_string(r, len)?;
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let n = rows.checked_mul(cols).filter(|&n| n <= 1 << 28).ok_or_else(|| bad("tensor too large"))?;
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw).map_err(|_| bad("truncated"))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        params.assign(&name, Tensor::new(rows, cols, data)?).map_err(|e| bad(e.to_string()))?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    agent.set_params(params)?;
    Ok((agent, extra))
}

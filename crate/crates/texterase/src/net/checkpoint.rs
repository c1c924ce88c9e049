//! Checkpoint container: a named-tensor archive with a JSON header.
//!
//! Layout (all integers little-endian):
//! ```text
//! magic  b"TXER"
//! u32    format version (1)
//! u64    header length in bytes
//! []     header JSON
//! []     tensor payload: f64 little-endian, concatenated in header order
//! ```
//! The header carries `{config, epoch, parameter_count, optimizer_step,
//! tensors: [{name, shape, offset, len}]}` where `offset` is a byte offset
//! into the payload. Weights, normalization buffers, and (optionally)
//! optimizer moments under `adam.m.*` / `adam.v.*` all live in the same
//! flat namespace, so other implementations can cross-load by name.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ErasingNetwork, NetError, NetworkConfig};
use texterase_tensor::optim::Adam;
use texterase_tensor::{Shape, Tensor};

const MAGIC: &[u8; 4] = b"TXER";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    epoch: u64,
    parameter_count: u64,
    optimizer_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

/// Write a bare named-tensor archive (same container, no network header).
/// Used for things like frozen feature-extractor weights.
pub fn write_tensor_archive(path: &Path, tensors: &[(String, Tensor)]) -> Result<(), NetError> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        let s = t.shape();
        entries.push(TensorEntry {
            name: name.clone(),
            shape: [s.n, s.c, s.h, s.w],
            offset,
            len: t.numel() as u64,
        });
        offset += (t.numel() * 8) as u64;
    }
    let header = serde_json::json!({ "tensors": entries });
    let header_json =
        serde_json::to_vec(&header).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(header_json.len() as u64).to_le_bytes())?;
    f.write_all(&header_json)?;
    for (_, t) in tensors {
        for v in t.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Read every named tensor out of an archive, ignoring any extra header
/// fields.
pub fn read_tensor_archive(path: &Path) -> Result<Vec<(String, Tensor)>, NetError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let mut word = [0u8; 4];
    f.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json)?;
    let header: serde_json::Value =
        serde_json::from_slice(&header_json).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    let entries: Vec<TensorEntry> = serde_json::from_value(
        header
            .get("tensors")
            .cloned()
            .ok_or_else(|| NetError::Checkpoint("header missing tensors".into()))?,
    )
    .map_err(|e| NetError::Checkpoint(e.to_string()))?;

    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let start = e.offset as usize;
        let end = start + e.len as usize * 8;
        if end > payload.len() {
            return Err(NetError::Checkpoint(format!("tensor {} out of bounds", e.name)));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let shape = Shape::new(e.shape[0], e.shape[1], e.shape[2], e.shape[3]);
        if shape.numel() != e.len as usize {
            return Err(NetError::Checkpoint(format!("tensor {} shape/len mismatch", e.name)));
        }
        out.push((e.name, Tensor::new(shape, data)));
    }
    Ok(out)
}

fn collect_tensors(net: &ErasingNetwork, opt: Option<&Adam>) -> Vec<(String, Tensor)> {
    let ps = net.params();
    let mut out: Vec<(String, Tensor)> = ps
        .ids()
        .map(|id| (ps.name(id).to_string(), ps.tensor(id).clone()))
        .collect();
    if let Some(opt) = opt {
        let (_, m, v) = opt.state();
        for (slot, id) in ps.ids().enumerate() {
            if let Some(Some(t)) = m.get(slot) {
                out.push((format!("adam.m.{}", ps.name(id)), t.clone()));
            }
            if let Some(Some(t)) = v.get(slot) {
                out.push((format!("adam.v.{}", ps.name(id)), t.clone()));
            }
        }
    }
    out
}

pub fn save_checkpoint(
    net: &ErasingNetwork,
    opt: Option<&Adam>,
    epoch: u64,
    path: &Path,
) -> Result<(), NetError> {
    let tensors = collect_tensors(net, opt);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in &tensors {
        let s = t.shape();
        entries.push(TensorEntry {
            name: name.clone(),
            shape: [s.n, s.c, s.h, s.w],
            offset,
            len: t.numel() as u64,
        });
        offset += (t.numel() * 8) as u64;
    }
    let header = Header {
        config: net.config.clone(),
        epoch,
        parameter_count: net.params().num_weight_scalars() as u64,
        optimizer_step: opt.map(|o| o.step_count()),
        tensors: entries,
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| NetError::Checkpoint(e.to_string()))?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(header_json.len() as u64).to_le_bytes())?;
    f.write_all(&header_json)?;
    for (_, t) in &tensors {
        for v in t.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Optimizer state recovered from a checkpoint.
pub struct AdamRestore {
    pub step: u64,
    pub m: Vec<Option<Tensor>>,
    pub v: Vec<Option<Tensor>>,
}

pub struct LoadedCheckpoint {
    pub network: ErasingNetwork,
    pub epoch: u64,
    pub optimizer: Option<AdamRestore>,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint, NetError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let mut word = [0u8; 4];
    f.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json)?;
    let header: Header =
        serde_json::from_slice(&header_json).map_err(|e| NetError::Checkpoint(e.to_string()))?;

    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;

    let mut tensors = std::collections::HashMap::new();
    for e in &header.tensors {
        let start = e.offset as usize;
        let end = start + e.len as usize * 8;
        if end > payload.len() {
            return Err(NetError::Checkpoint(format!("tensor {} out of bounds", e.name)));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let shape = Shape::new(e.shape[0], e.shape[1], e.shape[2], e.shape[3]);
        if shape.numel() != e.len as usize {
            return Err(NetError::Checkpoint(format!("tensor {} shape/len mismatch", e.name)));
        }
        tensors.insert(e.name.clone(), Tensor::new(shape, data));
    }

    let mut network = ErasingNetwork::new(header.config.clone())?;
    {
        let ps = network.params_mut();
        let ids: Vec<_> = ps.ids().collect();
        for id in ids {
            let name = ps.name(id).to_string();
            let t = tensors
                .get(&name)
                .ok_or_else(|| NetError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != ps.tensor(id).shape() {
                return Err(NetError::Checkpoint(format!(
                    "tensor {name}: shape {} != expected {}",
                    t.shape(),
                    ps.tensor(id).shape()
                )));
            }
            ps.set_tensor(id, t.clone());
        }
    }
    let optimizer = header.optimizer_step.map(|step| {
        let ps = network.params();
        let m = ps
            .ids()
            .map(|id| tensors.get(&format!("adam.m.{}", ps.name(id))).cloned())
            .collect();
        let v = ps
            .ids()
            .map(|id| tensors.get(&format!("adam.v.{}", ps.name(id))).cloned())
            .collect();
        AdamRestore { step, m, v }
    });
    Ok(LoadedCheckpoint {
        network,
        epoch: header.epoch,
        optimizer,
    })
}

//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HARP"  u32 version  u32 meta_len  meta (JSON)
//! u32 param_count
//! per parameter: u32 name_len  name  u32 rank  u64 dims[rank]  f64 values[prod(dims)]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use harp_core::env::ScenarioConfig;
use harp_core::groupmix::{HarpNet, NetConfig, NetDims};
use harp_core::grouping::GroupPartition;
use harp_core::numcore::{ParameterStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"HARP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub scenario: String,
    pub dims: NetDims,
    pub net: NetConfig,
    /// Partition reached by regrouping during training; deployment starts from it.
    pub partition: GroupPartition,
    pub train_seed: u64,
    pub env_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub net: HarpNet,
    pub store: ParameterStore<f64>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta, net: HarpNet, store: ParameterStore<f64>) -> Self {
        Self { meta, net, store }
    }

    /// Fails unless the network was built for `scenario`'s team sizes.
    pub fn check_scenario(&self, scenario: &ScenarioConfig) -> Result<()> {
        let want = NetDims::for_scenario(scenario);
        if want != self.meta.dims {
            return Err(bad(format!(
                "checkpoint was trained on {} with {:?}; scenario {} needs {:?}",
                self.meta.scenario, self.meta.dims, scenario.name, want
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for p in self.store.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            let shape = p.value.shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
        if &magic != MAGIC {
            return Err(bad("not a HARP checkpoint (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(take(&mut r, meta_len)?).map_err(|e| bad(format!("metadata: {e}")))?;

        // Rebuild the architecture, then overwrite every value from the blobs.
        let mut store = ParameterStore::new();
        let net = HarpNet::new(&mut store, meta.dims, meta.net, &mut ChaCha8Rng::seed_from_u64(0))?;
        let count = read_u32(&mut r)? as usize;
        if count != store.len() {
            return Err(bad(format!("expected {} parameters, found {count}", store.len())));
        }
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = std::str::from_utf8(take(&mut r, name_len)?)
                .map_err(|_| bad("parameter name is not UTF-8"))?
                .to_string();
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let id = store.id(&name).map_err(|_| bad(format!("unknown parameter {name}")))?;
            if store.value(id).shape() != shape.as_slice() {
                return Err(bad(format!(
                    "parameter {name}: stored shape {shape:?}, architecture needs {:?}",
                    store.value(id).shape()
                )));
            }
            let n: usize = shape.iter().product();
            let raw = take(&mut r, n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            *store.value_mut(id) = Tensor::new(shape, data)?;
        }
        if !r.is_empty() {
            return Err(bad(format!("{} trailing bytes", r.len())));
        }
        meta.partition
            .check_covers(&(0..meta.dims.n_agents).collect::<Vec<_>>())
            .map_err(|e| bad(format!("partition: {e}")))?;
        Ok(Self { meta, net, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Checkpoint(m) => CliError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Hex SHA-256 of a file, recorded in replay logs to pin the parameters.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(bad("truncated file"));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r, 4)?.try_into().expect("4 bytes")))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r, 8)?.try_into().expect("8 bytes")))
}

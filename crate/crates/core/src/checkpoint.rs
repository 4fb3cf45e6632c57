//! `.ckpt` files: policy, optional memory net and optimizer moments.
//!
//! Layout: magic, `u32` version, `u32` header length, JSON header, `f64`
//! little-endian payload in header tensor order, then the SHA-256 of all
//! preceding bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::memory::{FeatureSet, MemoryNet};
use crate::nn::Params;
use crate::optim::Adam;
use crate::policy::{PolicyConfig, PolicyParams};
use crate::training::OptimState;

const MAGIC: &[u8; 8] = b"MEMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const HASH_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 (hex) of the resolved configuration text and the seed.
    pub config_hash: String,
    pub seed: u64,
    pub command: String,
}

impl Provenance {
    pub fn new(config_snapshot: &str, seed: u64, command: &str) -> Self {
        let mut h = Sha256::new();
        h.update(config_snapshot.as_bytes());
        h.update(seed.to_le_bytes());
        Provenance { config_hash: hex(&h.finalize()), seed, command: command.to_string() }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub net: Option<MemoryNet>,
    pub optim: Option<OptimState>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    policy: PolicyConfig,
    memory_features: Option<FeatureSet>,
    /// Adam step counts `(policy, net)` when moments are stored.
    optimizer_steps: Option<(u64, u64)>,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
}

fn collect<P: Params>(p: &P, tensors: &mut Vec<TensorEntry>, payload: &mut Vec<f64>) {
    p.visit(&mut |name, shape, v| {
        tensors.push(TensorEntry { name: name.to_string(), shape: shape.to_vec() });
        payload.extend_from_slice(v);
    });
}

fn moments(name: &str, adam: &Adam, tensors: &mut Vec<TensorEntry>, payload: &mut Vec<f64>) {
    for (suffix, v) in [("m", &adam.m), ("v", &adam.v)] {
        tensors.push(TensorEntry { name: format!("opt.{name}.{suffix}"), shape: vec![v.len()] });
        payload.extend_from_slice(v);
    }
}

impl Checkpoint {
    pub fn new(params: PolicyParams, net: Option<MemoryNet>, provenance: Provenance) -> Self {
        Checkpoint { params, net, optim: None, provenance }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        collect(&self.params, &mut tensors, &mut payload);
        if let Some(net) = &self.net {
            collect(net, &mut tensors, &mut payload);
        }
        if let Some(o) = &self.optim {
            moments("policy", &o.policy, &mut tensors, &mut payload);
            moments("net", &o.net, &mut tensors, &mut payload);
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            policy: self.params.config,
            memory_features: self.net.as_ref().map(|n| n.features),
            optimizer_steps: self.optim.as_ref().map(|o| (o.policy.t, o.net.t)),
            provenance: self.provenance.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * payload.len() + HASH_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 + HASH_LEN || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic or truncated)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - HASH_LEN);
        let found = Sha256::digest(body);
        if found.as_slice() != digest {
            return Err(Error::HashMismatch { expected: hex(digest), found: hex(&found) });
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { expected: CHECKPOINT_VERSION, found: version });
        }
        let hlen = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let header_end = 16usize.checked_add(hlen).filter(|&e| e <= body.len()).ok_or_else(|| Error::Format("checkpoint header truncated".into()))?;
        let header: Header = serde_json::from_slice(&body[16..header_end])?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Version { expected: CHECKPOINT_VERSION, found: header.format_version });
        }
        let raw = &body[header_end..];
        if raw.len() % 8 != 0 {
            return Err(Error::Format("checkpoint payload is not a whole number of f64 values".into()));
        }
        let payload: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        header.policy.validate()?;

        let mut params = PolicyParams::init(header.policy, 0);
        let mut net = header.memory_features.map(MemoryNet::zeros);
        let mut expected: Vec<(String, Vec<usize>)> = params.shape_table();
        if let Some(n) = &net {
            expected.extend(n.shape_table());
        }
        if header.optimizer_steps.is_some() {
            let np = params.num_params();
            let nn = net.as_ref().map_or(0, |n| n.num_params());
            for (name, len) in [("policy", np), ("net", nn)] {
                expected.push((format!("opt.{name}.m"), vec![len]));
                expected.push((format!("opt.{name}.v"), vec![len]));
            }
        }
        let stored: Vec<(String, Vec<usize>)> = header.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
        if stored != expected {
            return Err(Error::Format("checkpoint tensor table does not match its architecture".into()));
        }
        let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if total != payload.len() {
            return Err(Error::Format(format!("checkpoint payload holds {} values, expected {total}", payload.len())));
        }
        let mut pos = 0;
        let mut take = |len: usize| {
            let s = &payload[pos..pos + len];
            pos += len;
            s.to_vec()
        };
        params.set_flat(&take(params.num_params()));
        if let Some(n) = net.as_mut() {
            let len = n.num_params();
            n.set_flat(&take(len));
        }
        let optim = header.optimizer_steps.map(|(tp, tn)| {
            let mut policy = Adam::new(0);
            policy.m = take(params.num_params());
            policy.v = take(params.num_params());
            policy.t = tp;
            let nn = net.as_ref().map_or(0, |n| n.num_params());
            let mut netopt = Adam::new(0);
            netopt.m = take(nn);
            netopt.v = take(nn);
            netopt.t = tn;
            OptimState { policy, net: netopt }
        });
        Ok(Checkpoint { params, net, optim, provenance: header.provenance })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Load and require a specific architecture.
    pub fn load_expecting(path: &Path, arch: &PolicyConfig) -> Result<Self> {
        let c = Self::load(path)?;
        c.check_architecture(arch)?;
        Ok(c)
    }

    pub fn check_architecture(&self, arch: &PolicyConfig) -> Result<()> {
        if &self.params.config != arch {
            return Err(Error::validation(format!(
                "checkpoint architecture {:?} does not match configured {:?}",
                self.params.config, arch
            )));
        }
        Ok(())
    }
}

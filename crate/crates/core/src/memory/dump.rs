//! Binary snapshot of a [`Memory`] for inspection and restore.
//!
//! Layout: magic, `u32` version, `u32` header length, JSON header, then for
//! every slot a `u32` entry count followed by the entries
//! (`u32` action, six `f64`).

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Memory, MemoryEntry};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MEMDUMP\0";
pub const MEMORY_DUMP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    n: usize,
    capacity: usize,
    shared: bool,
    attempts: usize,
}

fn take<'a>(buf: &mut &'a [u8], len: usize) -> Result<&'a [u8]> {
    if buf.len() < len {
        return Err(Error::Format("memory dump is truncated".into()));
    }
    let (head, rest) = buf.split_at(len);
    *buf = rest;
    Ok(head)
}

fn u32_le(buf: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, 4)?.try_into().unwrap()))
}

fn f64_le(buf: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_le_bytes(take(buf, 8)?.try_into().unwrap()))
}

impl Memory {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            format_version: MEMORY_DUMP_VERSION,
            n: self.n,
            capacity: self.capacity,
            shared: self.shared,
            attempts: self.attempts,
        })
        .expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&MEMORY_DUMP_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for slot in self.slots() {
            out.extend_from_slice(&(slot.len() as u32).to_le_bytes());
            for e in slot {
                out.extend_from_slice(&(e.action as u32).to_le_bytes());
                for v in [e.action_logp, e.ret, e.budget_at_write, e.memory_logit_at_write, e.traj_logp, e.tail_logp] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut buf = bytes;
        if take(&mut buf, 8)? != MAGIC {
            return Err(Error::Format("not a memory dump".into()));
        }
        let version = u32_le(&mut buf)?;
        if version != MEMORY_DUMP_VERSION {
            return Err(Error::Version { expected: MEMORY_DUMP_VERSION, found: version });
        }
        let hlen = u32_le(&mut buf)? as usize;
        let header: Header = serde_json::from_slice(take(&mut buf, hlen)?)?;
        if header.format_version != MEMORY_DUMP_VERSION {
            return Err(Error::Version { expected: MEMORY_DUMP_VERSION, found: header.format_version });
        }
        let mut mem = Memory::new(header.n, header.capacity, header.shared);
        mem.attempts = header.attempts;
        for slot in mem.slots.iter_mut() {
            let count = u32_le(&mut buf)? as usize;
            if count > header.capacity {
                return Err(Error::Format("memory slot exceeds its capacity".into()));
            }
            let mut entries = VecDeque::with_capacity(header.capacity);
            for _ in 0..count {
                let action = u32_le(&mut buf)? as usize;
                if action >= header.n {
                    return Err(Error::Format(format!("stored action {action} out of range")));
                }
                entries.push_back(MemoryEntry {
                    action,
                    action_logp: f64_le(&mut buf)?,
                    ret: f64_le(&mut buf)?,
                    budget_at_write: f64_le(&mut buf)?,
                    memory_logit_at_write: f64_le(&mut buf)?,
                    traj_logp: f64_le(&mut buf)?,
                    tail_logp: f64_le(&mut buf)?,
                });
            }
            *slot = entries;
        }
        if !buf.is_empty() {
            return Err(Error::Format("trailing bytes after memory dump".into()));
        }
        Ok(mem)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

//! `.dset` files: an 8-byte magic, a little-endian `u32` format version and
//! header length, a JSON header, then packed little-endian instance records.
//!
//! Record layout: `id: u64`, `n` pairs of `f64` coordinates, and for CVRP a
//! `u32` capacity followed by `n` `u32` demands.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Instance, ProblemKind};
use crate::error::{Error, Result};

pub const DSET_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MEMDSET\0";

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: ProblemKind,
    n: usize,
    count: usize,
    seed: u64,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("truncated file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Dataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            format_version: DSET_VERSION,
            kind: self.kind,
            n: self.n,
            count: self.instances.len(),
            seed: self.seed,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + self.instances.len() * (8 + 16 * self.n));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&DSET_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for inst in &self.instances {
            out.extend_from_slice(&inst.id.to_le_bytes());
            for c in &inst.coords {
                out.extend_from_slice(&c[0].to_le_bytes());
                out.extend_from_slice(&c[1].to_le_bytes());
            }
            if self.kind == ProblemKind::Cvrp {
                out.extend_from_slice(&inst.capacity.to_le_bytes());
                for d in &inst.demands {
                    out.extend_from_slice(&d.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != DSET_VERSION {
            return Err(Error::Version { expected: DSET_VERSION, found: version });
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)?;
        if header.format_version != DSET_VERSION {
            return Err(Error::Version { expected: DSET_VERSION, found: header.format_version });
        }
        let mut instances = Vec::with_capacity(header.count);
        for _ in 0..header.count {
            let id = r.u64()?;
            let mut coords = Vec::with_capacity(header.n);
            for _ in 0..header.n {
                coords.push([r.f64()?, r.f64()?]);
            }
            let inst = match header.kind {
                ProblemKind::Tsp => Instance::tsp(coords, id)?,
                ProblemKind::Cvrp => {
                    let capacity = r.u32()?;
                    let demands = (0..header.n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                    Instance::cvrp(coords, demands, capacity, id)?
                }
            };
            instances.push(inst);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last instance".into()));
        }
        Ok(Dataset { kind: header.kind, n: header.n, seed: header.seed, instances })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Reference costs, one row per instance: `instance_id,reference_cost`.
pub fn write_references(path: impl AsRef<Path>, ids: &[u64], costs: &[f64]) -> Result<()> {
    let mut s = String::from("instance_id,reference_cost\n");
    for (id, c) in ids.iter().zip(costs) {
        s.push_str(&format!("{id},{c:.12}\n"));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_references(path: impl AsRef<Path>) -> Result<Vec<(u64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (id, cost) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("reference line {}: expected two columns", lineno + 1)))?;
        let id = id.trim().parse().map_err(|e| Error::Format(format!("reference line {}: {e}", lineno + 1)))?;
        let cost: f64 = cost.trim().parse().map_err(|e| Error::Format(format!("reference line {}: {e}", lineno + 1)))?;
        rows.push((id, cost));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::generate_dataset;

    #[test]
    fn roundtrip_both_kinds() {
        for kind in [ProblemKind::Tsp, ProblemKind::Cvrp] {
            let ds = generate_dataset(kind, 9, 3, 42).unwrap();
            let back = Dataset::from_bytes(&ds.to_bytes().unwrap()).unwrap();
            assert_eq!(ds, back);
        }
    }

    #[test]
    fn rejects_unknown_version_and_truncation() {
        let ds = generate_dataset(ProblemKind::Tsp, 5, 2, 1).unwrap();
        let mut bytes = ds.to_bytes().unwrap();
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(Dataset::from_bytes(truncated), Err(Error::Format(_))));
        bytes[8] = 9;
        assert!(matches!(Dataset::from_bytes(&bytes), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn references_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ref.csv");
        write_references(&p, &[3, 9], &[1.5, 2.25]).unwrap();
        assert_eq!(read_references(&p).unwrap(), vec![(3, 1.5), (9, 2.25)]);
    }
}

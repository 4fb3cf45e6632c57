//! Per-node memory of past attempts and the correction logits derived from it.
//!
//! Every transition of a finished trajectory is written to the slot keyed by
//! `(start point, node the agent stood on)`. When the agent later stands on
//! the same node under the same start point, that slot's entries are turned
//! into feature rows, each row is scored by [`MemoryNet`], and the scores are
//! summed per action into a correction added to the base logits.

mod dump;
mod features;
mod net;

use std::collections::VecDeque;

use crate::env::Trajectory;
use crate::error::{Error, Result};

pub use dump::MEMORY_DUMP_VERSION;
pub use features::{build_features, features_into, FeatureSet, FULL_FEATURES};
pub use net::{correction_logits, memory_net_grad, MemoryNet, RetrievalRecord, HIDDEN};

/// Default slot capacity.
pub const DEFAULT_CAPACITY: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemoryEntry {
    pub action: usize,
    pub action_logp: f64,
    /// Return of the whole trajectory (negative cost).
    pub ret: f64,
    /// Fraction of the budget consumed when the entry was written.
    pub budget_at_write: f64,
    /// Correction logit the memory gave this action at the time.
    pub memory_logit_at_write: f64,
    pub traj_logp: f64,
    /// Log-probability of this action and everything after it.
    pub tail_logp: f64,
}

/// Grid of FIFO ring buffers indexed by `(start point, node)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Memory {
    n: usize,
    capacity: usize,
    shared: bool,
    slots: Vec<VecDeque<MemoryEntry>>,
    attempts: usize,
}

impl Memory {
    /// Memory for an `n`-node instance. With `shared`, all start points use
    /// the same row of slots.
    pub fn new(n: usize, capacity: usize, shared: bool) -> Self {
        let rows = if shared { 1 } else { n };
        Memory { n, capacity, shared, slots: vec![VecDeque::with_capacity(capacity); rows * n], attempts: 0 }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn shared(&self) -> bool {
        self.shared
    }

    /// Number of attempts written so far.
    pub fn attempts(&self) -> usize {
        self.attempts
    }

    pub fn len(&self) -> usize {
        self.slots.iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(|s| s.is_empty())
    }

    fn slot_index(&self, start_point: usize, node: usize) -> Result<usize> {
        if start_point >= self.n || node >= self.n {
            return Err(Error::contract(format!(
                "memory slot ({start_point}, {node}) out of range for {} nodes",
                self.n
            )));
        }
        let row = if self.shared { 0 } else { start_point };
        Ok(row * self.n + node)
    }

    /// Entries of one slot, oldest first.
    pub fn retrieve(&self, start_point: usize, node: usize) -> Result<&VecDeque<MemoryEntry>> {
        Ok(&self.slots[self.slot_index(start_point, node)?])
    }

    pub fn push(&mut self, start_point: usize, node: usize, entry: MemoryEntry) -> Result<()> {
        let i = self.slot_index(start_point, node)?;
        let slot = &mut self.slots[i];
        if slot.len() == self.capacity {
            slot.pop_front();
        }
        slot.push_back(entry);
        Ok(())
    }

    /// Store one entry per step of a finished trajectory.
    pub fn write_trajectory(&mut self, traj: &Trajectory, attempt_index: usize, total_budget: usize) -> Result<()> {
        if traj.actions.is_empty() || traj.action_logps.len() != traj.actions.len() || !traj.ret.is_finite() {
            return Err(Error::contract("cannot write an incomplete trajectory to memory"));
        }
        if attempt_index >= total_budget {
            return Err(Error::contract(format!("attempt {attempt_index} outside budget {total_budget}")));
        }
        let positions = traj.positions();
        let traj_logp = traj.total_logp();
        let budget_at_write = attempt_index as f64 / total_budget as f64;
        let mut tail = vec![0.0; traj.actions.len()];
        let mut acc = 0.0;
        for t in (0..traj.actions.len()).rev() {
            acc += traj.action_logps[t];
            tail[t] = acc;
        }
        for t in 0..traj.actions.len() {
            let entry = MemoryEntry {
                action: traj.actions[t],
                action_logp: traj.action_logps[t],
                ret: traj.ret,
                budget_at_write,
                memory_logit_at_write: traj.memory_logits_taken.get(t).copied().unwrap_or(0.0),
                traj_logp,
                tail_logp: tail[t],
            };
            self.push(traj.start_point, positions[t], entry)?;
        }
        Ok(())
    }

    /// Mark the end of an attempt (after all its trajectories were written).
    pub fn finish_attempt(&mut self) {
        self.attempts += 1;
    }

    pub(crate) fn slots(&self) -> &[VecDeque<MemoryEntry>] {
        &self.slots
    }
}

/// Read-only view combining a memory snapshot, the scoring net and the
/// remaining budget of the current attempt.
#[derive(Clone, Copy)]
pub struct MemoryReader<'a> {
    pub memory: &'a Memory,
    pub net: &'a MemoryNet,
    pub remaining_budget: f64,
}

impl<'a> MemoryReader<'a> {
    pub fn new(memory: &'a Memory, net: &'a MemoryNet, remaining_budget: f64) -> Self {
        MemoryReader { memory, net, remaining_budget }
    }

    /// Overwrite `out` with the correction logits for this slot.
    pub fn correction_into(&self, start_point: usize, node: usize, out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        let entries = self.memory.retrieve(start_point, node)?;
        if entries.is_empty() {
            return Ok(());
        }
        let dim = self.net.features.dim();
        let mut rows = Vec::with_capacity(entries.len() * dim);
        features_into(entries.iter(), self.remaining_budget, self.net.features, &mut rows);
        for (e, f) in entries.iter().zip(rows.chunks_exact(dim)) {
            if e.action >= out.len() {
                return Err(Error::contract(format!("stored action {} out of range", e.action)));
            }
            out[e.action] += self.net.forward(f);
        }
        Ok(())
    }

    /// Accumulate `dL/dphi` given `dL/d(final logits)` for this slot.
    pub fn backprop(&self, start_point: usize, node: usize, dlogits: &[f64], grads: &mut MemoryNet) -> Result<()> {
        let entries = self.memory.retrieve(start_point, node)?;
        if entries.is_empty() {
            return Ok(());
        }
        let dim = self.net.features.dim();
        let mut rows = Vec::with_capacity(entries.len() * dim);
        features_into(entries.iter(), self.remaining_budget, self.net.features, &mut rows);
        for (e, f) in entries.iter().zip(rows.chunks_exact(dim)) {
            let up = dlogits[e.action];
            if up != 0.0 {
                self.net.backward(f, up, grads);
            }
        }
        Ok(())
    }
}

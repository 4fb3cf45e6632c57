//! Budgeted inference-time search: greedy, sampling, memory-guided sampling
//! and per-instance embedding fine-tuning.
//!
//! Every strategy draws the rollout of start point `s` in attempt `i` from the
//! stream `(seed, ROLLOUT, instance id, i, s)`, so strategies that differ only
//! in their logits consume identical randomness.

mod eas;
mod evaluate;

use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::instances::{Instance, ProblemKind};
use crate::memory::{Memory, MemoryNet, MemoryReader, DEFAULT_CAPACITY};
use crate::par;
use crate::policy::{rollout_with, Encoded, PolicyParams, Temperature};
use crate::rng::{self, domain, Stream};

pub use eas::{eas_search, EasConfig};
pub use evaluate::{evaluate, write_metrics_csv, write_traces_csv, EvalReport, EvalRow};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    /// Sequential attempts B.
    pub attempts: usize,
    /// Rollouts per attempt, one per start point.
    pub starts: usize,
    pub temperature: Temperature,
}

impl BudgetSpec {
    pub fn new(attempts: usize, starts: usize, temperature: Temperature) -> Self {
        BudgetSpec { attempts, starts, temperature }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attempts == 0 || self.starts == 0 {
            return Err(Error::validation("budget needs at least one attempt and one start point"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.attempts * self.starts
    }
}

/// Start points used for `p` rollouts per attempt: the first `p` nodes for
/// TSP, the first `p` customers for CVRP.
pub fn start_points(instance: &Instance, p: usize) -> Result<Vec<usize>> {
    let (first, available) = match instance.kind {
        ProblemKind::Tsp => (0, instance.n()),
        ProblemKind::Cvrp => (1, instance.n() - 1),
    };
    if p == 0 || p > available {
        return Err(Error::validation(format!(
            "{p} start points requested but the instance offers {available}"
        )));
    }
    Ok((first..first + p).collect())
}

/// Fraction of the budget still available at attempt `i` of `total`.
pub fn remaining_budget(i: usize, total: usize) -> f64 {
    1.0 - i as f64 / total as f64
}

pub fn rollout_stream(seed: u64, instance: &Instance, attempt: usize, start: usize) -> Stream {
    rng::stream(seed, &[domain::ROLLOUT, instance.id, attempt as u64, start as u64])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub best_so_far: Vec<f64>,
    pub mean_cost: Vec<f64>,
    pub std_cost: Vec<f64>,
    pub best_cost: f64,
    pub best_solution: Vec<usize>,
    /// Trajectories constructed; always `attempts * starts` on success.
    pub trajectories: usize,
}

impl SearchTrace {
    fn new() -> Self {
        SearchTrace {
            best_so_far: Vec::new(),
            mean_cost: Vec::new(),
            std_cost: Vec::new(),
            best_cost: f64::INFINITY,
            best_solution: Vec::new(),
            trajectories: 0,
        }
    }

    /// Record one attempt. Returns the index of the best trajectory in `trajs`.
    fn record(&mut self, trajs: &[Trajectory]) -> usize {
        let costs: Vec<f64> = trajs.iter().map(|t| -t.ret).collect();
        let mut arg = 0;
        for (k, &c) in costs.iter().enumerate() {
            if c < costs[arg] {
                arg = k;
            }
        }
        if costs[arg] < self.best_cost {
            self.best_cost = costs[arg];
            self.best_solution = trajs[arg].solution();
        }
        self.best_so_far.push(self.best_cost);
        self.mean_cost.push(crate::stats::mean(&costs));
        self.std_cost.push(crate::stats::pop_std(&costs));
        self.trajectories += trajs.len();
        arg
    }

    /// Check the running-minimum property and the final best.
    pub fn check(&self, instance: &Instance, budget: &BudgetSpec) -> Result<()> {
        if self.trajectories != budget.total() || self.best_so_far.len() != budget.attempts {
            return Err(Error::contract(format!(
                "budget accounting: {} trajectories over {} attempts, expected {} over {}",
                self.trajectories,
                self.best_so_far.len(),
                budget.total(),
                budget.attempts
            )));
        }
        if self.best_so_far.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::contract("best-so-far trace increased"));
        }
        if self.best_so_far.last() != Some(&self.best_cost) {
            return Err(Error::contract("final best does not match the trace"));
        }
        let c = instance.cost(&self.best_solution)?;
        if (c - self.best_cost).abs() > 1e-9 * (1.0 + c.abs()) {
            return Err(Error::contract("best solution cost does not match recorded best"));
        }
        Ok(())
    }
}

/// Memory layout used by memory-guided search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    pub capacity: usize,
    pub shared: bool,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig { capacity: DEFAULT_CAPACITY, shared: false }
    }
}

/// All rollouts of attempt `i`, one per start point, in start order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_attempt(
    instance: &Instance,
    params: &PolicyParams,
    ctx: &crate::policy::DecoderContext,
    starts: &[usize],
    temperature: Temperature,
    seed: u64,
    attempt: usize,
    memory: Option<&MemoryReader>,
) -> Result<Vec<Trajectory>> {
    par::map_slice(starts, |&s| {
        let mut r = rollout_stream(seed, instance, attempt, s);
        rollout_with(instance, params, ctx, s, temperature, &mut r, memory, attempt)
    })
    .into_iter()
    .collect()
}

/// `B x P` independent samples from the frozen policy.
pub fn sampling_search(instance: &Instance, params: &PolicyParams, budget: &BudgetSpec, seed: u64) -> Result<SearchTrace> {
    budget.validate()?;
    let starts = start_points(instance, budget.starts)?;
    let enc = Encoded::new(instance, params);
    let mut trace = SearchTrace::new();
    for i in 0..budget.attempts {
        let trajs = run_attempt(instance, params, &enc.ctx, &starts, budget.temperature, seed, i, None)?;
        trace.record(&trajs);
    }
    Ok(trace)
}

/// Greedy decoding from every start point, repeated for each attempt.
pub fn greedy_search(instance: &Instance, params: &PolicyParams, budget: &BudgetSpec, seed: u64) -> Result<SearchTrace> {
    sampling_search(instance, params, &BudgetSpec { temperature: Temperature::Greedy, ..*budget }, seed)
}

/// Sampling with correction logits from a live per-instance memory.
pub fn memento_search(
    instance: &Instance,
    params: &PolicyParams,
    net: &MemoryNet,
    memory_config: &MemoryConfig,
    budget: &BudgetSpec,
    seed: u64,
) -> Result<SearchTrace> {
    budget.validate()?;
    net.check_shapes()?;
    let starts = start_points(instance, budget.starts)?;
    let enc = Encoded::new(instance, params);
    let mut memory = Memory::new(instance.n(), memory_config.capacity, memory_config.shared);
    let mut trace = SearchTrace::new();
    for i in 0..budget.attempts {
        let reader = MemoryReader::new(&memory, net, remaining_budget(i, budget.attempts));
        let trajs = run_attempt(instance, params, &enc.ctx, &starts, budget.temperature, seed, i, Some(&reader))?;
        trace.record(&trajs);
        for t in &trajs {
            memory.write_trajectory(t, i, budget.attempts)?;
        }
        memory.finish_attempt();
    }
    Ok(trace)
}

/// Search strategy together with its extra state.
#[derive(Clone, Debug)]
pub enum Strategy {
    Greedy,
    Sampling,
    Memento { net: MemoryNet, memory: MemoryConfig },
    Eas(EasConfig),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Sampling => "sampling",
            Strategy::Memento { .. } => "memento",
            // The fine-tuning baseline is an analog of the published method.
            Strategy::Eas(_) => "eas-analog",
        }
    }

    pub fn run(&self, instance: &Instance, params: &PolicyParams, budget: &BudgetSpec, seed: u64) -> Result<SearchTrace> {
        match self {
            Strategy::Greedy => greedy_search(instance, params, budget, seed),
            Strategy::Sampling => sampling_search(instance, params, budget, seed),
            Strategy::Memento { net, memory } => memento_search(instance, params, net, memory, budget, seed),
            Strategy::Eas(cfg) => eas_search(instance, params, budget, cfg, seed),
        }
    }
}

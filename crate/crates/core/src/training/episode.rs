use serde::{Deserialize, Serialize};

use super::{attempt_weight, AttemptLedger};
use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::instances::Instance;
use crate::memory::{Memory, MemoryNet, MemoryReader};
use crate::nn::Params;
use crate::par;
use crate::policy::{accumulate_trajectory_grad, DecoderGrads, Encoded, PolicyParams, Temperature};
use crate::search::{remaining_budget, run_attempt, start_points, MemoryConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub budget: usize,
    pub starts: usize,
    pub eps: f64,
    pub temperature: f64,
    pub memory: MemoryConfig,
    /// Also differentiate with respect to the base policy.
    pub policy_grads: bool,
}

/// Unnormalised sums for one instance.
#[derive(Clone, Debug)]
pub struct EpisodeOutput {
    /// `dL/dtheta`, present when policy gradients were requested.
    pub policy: Option<PolicyParams>,
    pub net: MemoryNet,
    pub loss: f64,
    pub ledger: AttemptLedger,
    pub mean_cost: f64,
    pub best_cost: f64,
    pub trajectories: usize,
}

/// Everything the loss depends on besides the parameters.
#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub instance: Instance,
    pub budget: usize,
    pub starts: usize,
    pub temperature: f64,
    pub attempts: Vec<RecordedAttempt>,
}

#[derive(Clone, Debug)]
pub struct RecordedAttempt {
    /// Memory as seen by the rollouts of this attempt.
    pub memory: Memory,
    pub remaining: f64,
    pub trajectories: Vec<Trajectory>,
    pub weights: Vec<f64>,
}

/// One training episode: `K` attempts on `instance` with a fresh memory.
///
/// Accumulates the gradient of
/// `-sum_i log(1 + eps + i) sum_k adv_ik sum_t log pi_M(a_t | s_t, M_i)`
/// where `M_i` is the memory after attempts `0..i`.
pub fn memento_episode(
    instance: &Instance,
    params: &PolicyParams,
    net: &MemoryNet,
    cfg: &EpisodeConfig,
    seed: u64,
    record: bool,
) -> Result<(EpisodeOutput, Option<EpisodeRecord>)> {
    net.check_shapes()?;
    let starts = start_points(instance, cfg.starts)?;
    let temperature = Temperature::Softmax(cfg.temperature);
    let enc = Encoded::new(instance, params);
    let mut memory = Memory::new(instance.n(), cfg.memory.capacity, cfg.memory.shared);
    let mut ledger = AttemptLedger::new();
    let mut acc = DecoderGrads::new(instance.n(), params.config.dim);
    let mut policy = cfg.policy_grads.then(|| params.zeros_like());
    let mut net_grads = MemoryNet::zeros(net.features);
    let mut recorded = Vec::new();
    let (mut loss, mut cost_sum, mut best_cost) = (0.0, 0.0, f64::INFINITY);
    for i in 0..cfg.budget {
        let remaining = remaining_budget(i, cfg.budget);
        let reader = MemoryReader::new(&memory, net, remaining);
        let trajs = run_attempt(instance, params, &enc.ctx, &starts, temperature, seed, i, Some(&reader))?;
        let returns: Vec<f64> = trajs.iter().map(|t| t.ret).collect();
        let adv = ledger.record(&returns)?;
        let w_i = attempt_weight(i, cfg.eps);
        let weights: Vec<f64> = adv.iter().map(|a| w_i * a).collect();
        for (t, &w) in trajs.iter().zip(&weights) {
            cost_sum -= t.ret;
            best_cost = best_cost.min(-t.ret);
            if w == 0.0 {
                continue;
            }
            let sink = policy.as_mut().map(|g| (&mut acc, g));
            let logp = accumulate_trajectory_grad(
                instance,
                params,
                &enc.ctx,
                t,
                w,
                cfg.temperature,
                Some(&reader),
                true,
                sink,
                Some(&mut net_grads),
            )?;
            loss -= w * logp;
        }
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss on instance {} at attempt {i}; returns {returns:?}, weights {weights:?}",
                instance.id
            )));
        }
        if record {
            recorded.push(RecordedAttempt { memory: memory.clone(), remaining, trajectories: trajs.clone(), weights });
        }
        for t in &trajs {
            memory.write_trajectory(t, i, cfg.budget)?;
        }
        memory.finish_attempt();
    }
    if let Some(g) = policy.as_mut() {
        enc.backward(params, acc, g);
        g.scale(-1.0);
    }
    net_grads.scale(-1.0);
    let trajectories = cfg.budget * starts.len();
    let rec = record.then(|| EpisodeRecord {
        instance: instance.clone(),
        budget: cfg.budget,
        starts: starts.len(),
        temperature: cfg.temperature,
        attempts: recorded,
    });
    Ok((
        EpisodeOutput {
            policy,
            net: net_grads,
            loss,
            ledger,
            mean_cost: cost_sum / trajectories as f64,
            best_cost,
            trajectories,
        },
        rec,
    ))
}

/// Batch gradients normalised by `1 / (K * P * instances)`.
#[derive(Clone, Debug)]
pub struct BatchGrads {
    pub policy: Option<PolicyParams>,
    pub net: MemoryNet,
    pub loss: f64,
    pub mean_cost: f64,
    /// Mean over instances of the best cost found in the episode.
    pub mean_best_cost: f64,
    pub mean_advantage: f64,
    pub zero_fraction: f64,
    pub trajectories: usize,
    pub ledgers: Vec<AttemptLedger>,
}

/// Run one episode per instance (in parallel) and reduce in instance order.
pub fn memento_loss_grad(
    instances: &[Instance],
    params: &PolicyParams,
    net: &MemoryNet,
    cfg: &EpisodeConfig,
    seed: u64,
    record: bool,
) -> Result<(BatchGrads, Vec<EpisodeRecord>)> {
    if instances.is_empty() {
        return Err(Error::validation("empty training batch"));
    }
    let outs: Vec<Result<(EpisodeOutput, Option<EpisodeRecord>)>> =
        par::map_slice(instances, |inst| memento_episode(inst, params, net, cfg, seed, record));
    let scale = 1.0 / (cfg.budget * cfg.starts * instances.len()) as f64;
    let mut policy = cfg.policy_grads.then(|| params.zeros_like());
    let mut net_grads = MemoryNet::zeros(net.features);
    let mut records = Vec::new();
    let mut ledgers = Vec::new();
    let (mut loss, mut cost, mut best, mut adv, mut zero, mut count) = (0.0, 0.0, 0.0, 0.0, 0.0, 0);
    for out in outs {
        let (o, rec) = out?;
        if let (Some(total), Some(g)) = (policy.as_mut(), o.policy.as_ref()) {
            total.add_scaled(scale, g);
        }
        net_grads.add_scaled(scale, &o.net);
        loss += scale * o.loss;
        cost += o.mean_cost;
        best += o.best_cost;
        let all: Vec<f64> = o.ledger.advantages.iter().flatten().copied().collect();
        adv += crate::stats::mean(&all);
        zero += o.ledger.zero_fraction();
        count += o.trajectories;
        ledgers.push(o.ledger);
        records.extend(rec);
    }
    let b = instances.len() as f64;
    Ok((
        BatchGrads {
            policy,
            net: net_grads,
            loss,
            mean_cost: cost / b,
            mean_best_cost: best / b,
            mean_advantage: adv / b,
            zero_fraction: zero / b,
            trajectories: count,
            ledgers,
        },
        records,
    ))
}

/// The batch loss of [`memento_loss_grad`] re-evaluated under new parameters
/// with sampled trajectories, advantages and memory contents held fixed.
pub fn recorded_loss(records: &[EpisodeRecord], params: &PolicyParams, net: &MemoryNet) -> Result<f64> {
    let mut total = 0.0;
    for rec in records {
        let enc = Encoded::new(&rec.instance, params);
        let scale = 1.0 / (rec.budget * rec.starts * records.len()) as f64;
        for att in &rec.attempts {
            let reader = MemoryReader::new(&att.memory, net, att.remaining);
            for (t, &w) in att.trajectories.iter().zip(&att.weights) {
                if w == 0.0 {
                    continue;
                }
                let logp = accumulate_trajectory_grad(
                    &rec.instance,
                    params,
                    &enc.ctx,
                    t,
                    0.0,
                    rec.temperature,
                    Some(&reader),
                    false,
                    None,
                    None,
                )?;
                total -= scale * w * logp;
            }
        }
    }
    Ok(total)
}

/// Gradient of [`recorded_loss`] with respect to the policy and the memory net.
pub fn recorded_loss_grad(records: &[EpisodeRecord], params: &PolicyParams, net: &MemoryNet) -> Result<(PolicyParams, MemoryNet)> {
    let mut policy = params.zeros_like();
    let mut net_grads = MemoryNet::zeros(net.features);
    for rec in records {
        let enc = Encoded::new(&rec.instance, params);
        let scale = 1.0 / (rec.budget * rec.starts * records.len()) as f64;
        let mut acc = DecoderGrads::new(rec.instance.n(), params.config.dim);
        let mut g = params.zeros_like();
        let mut ng = MemoryNet::zeros(net.features);
        for att in &rec.attempts {
            let reader = MemoryReader::new(&att.memory, net, att.remaining);
            for (t, &w) in att.trajectories.iter().zip(&att.weights) {
                if w == 0.0 {
                    continue;
                }
                accumulate_trajectory_grad(
                    &rec.instance,
                    params,
                    &enc.ctx,
                    t,
                    w,
                    rec.temperature,
                    Some(&reader),
                    false,
                    Some((&mut acc, &mut g)),
                    Some(&mut ng),
                )?;
            }
        }
        enc.backward(params, acc, &mut g);
        policy.add_scaled(-scale, &g);
        net_grads.add_scaled(-scale, &ng);
    }
    Ok((policy, net_grads))
}

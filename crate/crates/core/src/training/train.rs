use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{memento_loss_grad, TrainConfig};
use crate::error::{Error, Result};
use crate::instances::{sample_instance, Instance};
use crate::memory::MemoryNet;
use crate::nn::Params;
use crate::optim::{Adam, LearningRates};
use crate::policy::PolicyParams;
use crate::rng::{self, domain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub mean_cost: f64,
    /// Mean over the batch of the best cost found within the episode.
    pub best_of_k: f64,
    pub grad_norm: f64,
    pub wall_ms: u64,
}

pub fn write_log_csv(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    let mut out = String::from("step,mean_cost,best_of_K,grad_norm,wall_ms\n");
    for r in rows {
        out.push_str(&format!("{},{:.9},{:.9},{:.9e},{}\n", r.step, r.mean_cost, r.best_of_k, r.grad_norm, r.wall_ms));
    }
    std::fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// Adam moments for the policy and the memory net.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub policy: Adam,
    pub net: Adam,
}

impl OptimState {
    pub fn new(params: &PolicyParams, net: &MemoryNet) -> Self {
        OptimState { policy: Adam::new(params.num_params()), net: Adam::new(net.num_params()) }
    }
}

/// Apply one Adam update per group. A missing policy gradient leaves the
/// policy and its moments untouched.
pub fn optimizer_step(
    params: &mut PolicyParams,
    net: &mut MemoryNet,
    policy_grads: Option<&PolicyParams>,
    net_grads: &MemoryNet,
    lrs: &LearningRates,
    state: &mut OptimState,
) -> Result<()> {
    if let Some(g) = policy_grads {
        if g.shape_table() != params.shape_table() {
            return Err(Error::contract("policy gradient shapes do not match the parameters"));
        }
        state.policy.step(params, g, lrs)?;
    }
    if net_grads.shape_table() != net.shape_table() {
        return Err(Error::contract("memory net gradient shapes do not match the parameters"));
    }
    state.net.step(net, net_grads, lrs)
}

pub struct TrainOutcome {
    pub params: PolicyParams,
    pub net: MemoryNet,
    pub optim: OptimState,
    pub log: Vec<TrainLogRow>,
}

pub fn batch_instances(cfg: &TrainConfig, step: usize, chunk: usize) -> Vec<Instance> {
    let seed = rng::mix(&[cfg.seed, domain::TRAIN_BATCH]);
    let base = ((step * cfg.accumulation + chunk) * cfg.batch) as u64;
    (0..cfg.batch).map(|b| sample_instance(cfg.kind, cfg.n, seed, base + b as u64)).collect()
}

/// `cfg.steps` optimizer steps, each averaging `cfg.accumulation` batches.
///
/// `on_checkpoint` runs every `cfg.checkpoint_every` steps and after the last.
pub fn train(
    cfg: &TrainConfig,
    mut params: PolicyParams,
    mut net: MemoryNet,
    on_checkpoint: &mut dyn FnMut(usize, &PolicyParams, &MemoryNet) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if params.config.kind != cfg.kind {
        return Err(Error::validation(format!(
            "checkpoint is for {} but training is configured for {}",
            params.config.kind, cfg.kind
        )));
    }
    if net.features != cfg.features {
        return Err(Error::validation(format!(
            "memory net uses feature subset {} but training is configured for {}",
            net.features.name(),
            cfg.features.name()
        )));
    }
    let episode = cfg.episode();
    let lrs = cfg.effective_lrs();
    let mut optim = OptimState::new(&params, &net);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let clock = Instant::now();
        let mut policy_sum = episode.policy_grads.then(|| params.zeros_like());
        let mut net_sum = MemoryNet::zeros(net.features);
        let (mut mean_cost, mut best) = (0.0, 0.0);
        let inv = 1.0 / cfg.accumulation as f64;
        for chunk in 0..cfg.accumulation {
            let instances = batch_instances(cfg, step, chunk);
            let seed = rng::mix(&[cfg.seed, domain::TRAIN_ROLLOUT, step as u64, chunk as u64]);
            let (g, _) = memento_loss_grad(&instances, &params, &net, &episode, seed, false)?;
            if let (Some(total), Some(pg)) = (policy_sum.as_mut(), g.policy.as_ref()) {
                total.add_scaled(inv, pg);
            }
            net_sum.add_scaled(inv, &g.net);
            mean_cost += inv * g.mean_cost;
            best += inv * g.mean_best_cost;
            for l in &g.ledgers {
                l.check_telescoping()?;
            }
        }
        let grad_norm = (net_sum.sq_norm() + policy_sum.as_ref().map_or(0.0, |p| p.sq_norm())).sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Divergence(format!("training step {step}: non-finite gradient")));
        }
        optimizer_step(&mut params, &mut net, policy_sum.as_ref(), &net_sum, &lrs, &mut optim)?;
        let wall_ms = if cfg.timing { clock.elapsed().as_millis() as u64 } else { 0 };
        log::info!("train step {step}: mean cost {mean_cost:.4}, best-of-K {best:.4}, grad norm {grad_norm:.3e}");
        log.push(TrainLogRow { step, mean_cost, best_of_k: best, grad_norm, wall_ms });
        let last = step + 1 == cfg.steps;
        if last || (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
            on_checkpoint(step + 1, &params, &net)?;
        }
    }
    Ok(TrainOutcome { params, net, optim, log })
}

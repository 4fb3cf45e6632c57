use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::train::TrainLogRow;
use crate::error::{Error, Result};
use crate::instances::{sample_instance, Instance};
use crate::nn::Params;
use crate::optim::{Adam, LearningRates};
use crate::par;
use crate::policy::{accumulate_trajectory_grad, DecoderGrads, Encoded, PolicyConfig, PolicyParams, Temperature};
use crate::rng::{self, domain};
use crate::search::{run_attempt, start_points};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub policy: PolicyConfig,
    pub n: usize,
    pub batch: usize,
    pub starts: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub timing: bool,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.n < 2 || self.batch == 0 || self.starts == 0 {
            return Err(Error::validation("pretrain.n, pretrain.batch and pretrain.starts must be positive"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::validation("pretrain.lr must be a non-negative number"));
        }
        Ok(())
    }
}

/// `R_k - mean(R)`; sums to zero over the start points.
pub fn pomo_advantages(returns: &[f64]) -> Vec<f64> {
    let m = crate::stats::mean(returns);
    returns.iter().map(|r| r - m).collect()
}

struct InstanceGrad {
    grads: PolicyParams,
    mean_cost: f64,
    best_cost: f64,
}

fn instance_grad(inst: &Instance, params: &PolicyParams, starts: usize, seed: u64) -> Result<InstanceGrad> {
    let sp = start_points(inst, starts)?;
    let enc = Encoded::new(inst, params);
    let trajs = run_attempt(inst, params, &enc.ctx, &sp, Temperature::Softmax(1.0), seed, 0, None)?;
    let returns: Vec<f64> = trajs.iter().map(|t| t.ret).collect();
    let adv = pomo_advantages(&returns);
    let mut acc = DecoderGrads::new(inst.n(), params.config.dim);
    let mut grads = params.zeros_like();
    for (t, &a) in trajs.iter().zip(&adv) {
        if a != 0.0 {
            accumulate_trajectory_grad(inst, params, &enc.ctx, t, a, 1.0, None, true, Some((&mut acc, &mut grads)), None)?;
        }
    }
    enc.backward(params, acc, &mut grads);
    let costs: Vec<f64> = returns.iter().map(|r| -r).collect();
    Ok(InstanceGrad {
        grads,
        mean_cost: crate::stats::mean(&costs),
        best_cost: costs.iter().cloned().fold(f64::INFINITY, f64::min),
    })
}

/// Multi-start REINFORCE with the mean return over start points as baseline.
/// `on_log` sees every step's log row.
pub fn pretrain(cfg: &PretrainConfig, on_log: &mut dyn FnMut(&TrainLogRow)) -> Result<PolicyParams> {
    cfg.validate()?;
    let mut params = PolicyParams::init(cfg.policy, cfg.seed);
    let mut opt = Adam::new(params.num_params());
    let lrs = LearningRates { memory: 0.0, encoder: cfg.lr, decoder: cfg.lr };
    let batch_seed = rng::mix(&[cfg.seed, domain::TRAIN_BATCH]);
    for step in 0..cfg.steps {
        let clock = Instant::now();
        let instances: Vec<Instance> = (0..cfg.batch)
            .map(|b| sample_instance(cfg.policy.kind, cfg.n, batch_seed, (step * cfg.batch + b) as u64))
            .collect();
        let rollout_seed = rng::mix(&[cfg.seed, domain::TRAIN_ROLLOUT, step as u64]);
        let outs = par::map_slice(&instances, |inst| instance_grad(inst, &params, cfg.starts, rollout_seed));
        let mut grads = params.zeros_like();
        let (mut mean, mut best) = (0.0, 0.0);
        let scale = -1.0 / (cfg.batch * cfg.starts) as f64;
        for o in outs {
            let o = o?;
            grads.add_scaled(scale, &o.grads);
            mean += o.mean_cost / cfg.batch as f64;
            best += o.best_cost / cfg.batch as f64;
        }
        let grad_norm = grads.sq_norm().sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Divergence(format!("pretrain step {step}: non-finite gradient")));
        }
        opt.step(&mut params, &grads, &lrs)?;
        let wall_ms = if cfg.timing { clock.elapsed().as_millis() as u64 } else { 0 };
        on_log(&TrainLogRow { step, mean_cost: mean, best_of_k: best, grad_norm, wall_ms });
    }
    Ok(params)
}

//! Budgeted multi-attempt training of the memory net (and optionally the
//! base policy), plus single-shot multi-start pretraining of the base policy.

mod episode;
mod pretrain;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::ProblemKind;
use crate::memory::FeatureSet;
use crate::optim::LearningRates;
use crate::search::MemoryConfig;

pub use episode::{
    memento_episode, memento_loss_grad, recorded_loss, recorded_loss_grad, BatchGrads, EpisodeConfig, EpisodeOutput, EpisodeRecord,
    RecordedAttempt,
};
pub use pretrain::{pomo_advantages, pretrain, PretrainConfig};
pub use train::{optimizer_step, train, write_log_csv, OptimState, TrainLogRow, TrainOutcome};

/// `(max(ret - best, 0), max(ret, best))`.
pub fn improvement_advantage(ret: f64, best_so_far: f64) -> (f64, f64) {
    ((ret - best_so_far).max(0.0), ret.max(best_so_far))
}

/// `log(1 + eps + i)` for the 0-based attempt index `i`.
pub fn attempt_weight(i: usize, eps: f64) -> f64 {
    (1.0 + eps + i as f64).ln()
}

/// Returns and improvement advantages of one episode, per start point.
///
/// The first attempt seeds the best return of each start point and gets zero
/// advantage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttemptLedger {
    /// `returns[i][k]`: attempt `i`, start point slot `k`.
    pub returns: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
    pub best: Vec<f64>,
}

impl AttemptLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append one attempt and return its advantages.
    pub fn record(&mut self, returns: &[f64]) -> Result<Vec<f64>> {
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::Divergence("non-finite return".into()));
        }
        let adv = if self.returns.is_empty() {
            self.best = returns.to_vec();
            vec![0.0; returns.len()]
        } else {
            if returns.len() != self.best.len() {
                return Err(Error::contract("start point count changed within an episode"));
            }
            returns
                .iter()
                .zip(self.best.iter_mut())
                .map(|(&r, b)| {
                    let (a, nb) = improvement_advantage(r, *b);
                    *b = nb;
                    a
                })
                .collect()
        };
        self.returns.push(returns.to_vec());
        self.advantages.push(adv.clone());
        Ok(adv)
    }

    /// `sum_i adv_i = best - first return` for every start point, up to
    /// floating-point rounding of the summation.
    pub fn check_telescoping(&self) -> Result<()> {
        let Some(first) = self.returns.first() else { return Ok(()) };
        for k in 0..first.len() {
            let sum: f64 = self.advantages.iter().map(|a| a[k]).sum();
            let expect = self.best[k] - first[k];
            if (sum - expect).abs() > 1e-12 * (1.0 + self.best[k].abs()) * self.returns.len() as f64 {
                return Err(Error::contract(format!(
                    "telescoping violated at start slot {k}: {sum} vs {expect}"
                )));
            }
        }
        Ok(())
    }

    /// Fraction of zero advantages after the first attempt.
    pub fn zero_fraction(&self) -> f64 {
        let rest = &self.advantages[1.min(self.advantages.len())..];
        let total: usize = rest.iter().map(|a| a.len()).sum();
        if total == 0 {
            return 0.0;
        }
        rest.iter().flatten().filter(|&&a| a == 0.0).count() as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ProblemKind,
    pub n: usize,
    /// Attempts K per instance.
    pub budget: usize,
    pub batch: usize,
    pub starts: usize,
    pub accumulation: usize,
    pub lrs: LearningRates,
    pub eps: f64,
    pub steps: usize,
    pub seed: u64,
    /// Freeze the base policy and train the memory net at a tenth of its rate.
    pub refine: bool,
    pub temperature: f64,
    pub features: FeatureSet,
    pub memory: MemoryConfig,
    /// Invoke the checkpoint callback every this many steps (0: never).
    pub checkpoint_every: usize,
    pub timing: bool,
}

impl TrainConfig {
    pub fn new(kind: ProblemKind, n: usize) -> Self {
        TrainConfig {
            kind,
            n,
            budget: 50,
            batch: 16,
            starts: 20,
            accumulation: 4,
            lrs: LearningRates { memory: 0.004, encoder: 1e-4, decoder: 1e-4 },
            eps: 0.01,
            steps: 100,
            seed: 0,
            refine: false,
            temperature: 1.0,
            features: FeatureSet::D,
            memory: MemoryConfig::default(),
            checkpoint_every: 0,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("budget", self.budget),
            ("batch", self.batch),
            ("starts", self.starts),
            ("accumulation", self.accumulation),
            ("n", self.n),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::validation(format!("train.{k} must be positive")));
            }
        }
        if self.memory.capacity == 0 {
            return Err(Error::validation("train.memory_capacity must be positive"));
        }
        if !(self.eps > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::validation("train.eps and train.temperature must be positive"));
        }
        for (k, v) in [("lr_memory", self.lrs.memory), ("lr_encoder", self.lrs.encoder), ("lr_decoder", self.lrs.decoder)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::validation(format!("train.{k} must be a non-negative number")));
            }
        }
        Ok(())
    }

    /// Learning rates actually applied.
    pub fn effective_lrs(&self) -> LearningRates {
        if self.refine {
            LearningRates { memory: self.lrs.memory * 0.1, encoder: 0.0, decoder: 0.0 }
        } else {
            self.lrs
        }
    }

    pub fn episode(&self) -> EpisodeConfig {
        let lrs = self.effective_lrs();
        EpisodeConfig {
            budget: self.budget,
            starts: self.starts,
            eps: self.eps,
            temperature: self.temperature,
            memory: self.memory,
            policy_grads: lrs.encoder != 0.0 || lrs.decoder != 0.0,
        }
    }
}

//! Per-instance fine-tuning of additive node-embedding offsets.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{run_attempt, start_points, BudgetSpec, SearchTrace};
use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::instances::Instance;
use crate::nn::Params;
use crate::optim::{Adam, LearningRates};
use crate::policy::{accumulate_trajectory_grad, encode, DecoderContext, DecoderGrads, PolicyParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EasConfig {
    pub lr: f64,
    /// Weight of the incumbent log-likelihood term.
    pub lambda: f64,
    /// Halt when an attempt's mean cost exceeds the first attempt's by this
    /// relative margin.
    pub max_worsening: f64,
}

impl Default for EasConfig {
    fn default() -> Self {
        EasConfig { lr: 0.0032, lambda: 0.1, max_worsening: 0.5 }
    }
}

struct Offsets(Array2<f64>);

impl Params for Offsets {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("eas.offsets", self.0.shape(), self.0.as_slice().unwrap());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("eas.offsets", self.0.as_slice_mut().unwrap());
    }
}

/// Sampling where, after every attempt, the embedding offsets take one Adam
/// step on `mean_k (R_k - R_best) log p(tau_k) + lambda log p(tau_best)`.
pub fn eas_search(
    instance: &Instance,
    params: &PolicyParams,
    budget: &BudgetSpec,
    config: &EasConfig,
    seed: u64,
) -> Result<SearchTrace> {
    budget.validate()?;
    if !(config.lr >= 0.0 && config.lambda >= 0.0 && config.max_worsening > 0.0) {
        return Err(Error::validation("EAS learning rate and imitation weight must be non-negative"));
    }
    let starts = start_points(instance, budget.starts)?;
    let emb = encode(instance, params);
    let (n, d) = emb.dim();
    let mut offsets = Offsets(Array2::zeros((n, d)));
    let mut opt = Adam::new(n * d);
    let lrs = LearningRates { memory: 0.0, encoder: 0.0, decoder: config.lr };
    let temperature = budget.temperature.value();
    let mut scratch = params.zeros_like();
    let mut trace = SearchTrace::new();
    let mut incumbent: Option<Trajectory> = None;
    let mut first_mean = f64::NAN;
    for i in 0..budget.attempts {
        let ctx = DecoderContext::new(params, &emb + &offsets.0);
        let trajs = run_attempt(instance, params, &ctx, &starts, budget.temperature, seed, i, None)?;
        let arg = trace.record(&trajs);
        let mean = trace.mean_cost[i];
        if i == 0 {
            first_mean = mean;
        } else if mean > first_mean * (1.0 + config.max_worsening) {
            return Err(Error::Divergence(format!(
                "instance {}: attempt {i} mean cost {mean:.6} exceeds attempt 0 mean {first_mean:.6} by more than {:.0}%",
                instance.id,
                100.0 * config.max_worsening
            )));
        }
        if incumbent.as_ref().is_none_or(|b| trajs[arg].ret > b.ret) {
            incumbent = Some(trajs[arg].clone());
        }
        if i + 1 == budget.attempts || (config.lr == 0.0) {
            continue;
        }
        let best = incumbent.as_ref().unwrap();
        let mut acc = DecoderGrads::new(n, d);
        let p = trajs.len() as f64;
        for t in &trajs {
            let w = (t.ret - best.ret) / p;
            if w != 0.0 {
                accumulate_trajectory_grad(instance, params, &ctx, t, w, temperature, None, true, Some((&mut acc, &mut scratch)), None)?;
            }
        }
        if config.lambda > 0.0 {
            accumulate_trajectory_grad(instance, params, &ctx, best, config.lambda, temperature, None, false, Some((&mut acc, &mut scratch)), None)?;
        }
        // Ascent on the objective: Adam minimises, so feed the negated gradient.
        let grad = Offsets(-ctx.context_backward(params, acc, &mut scratch));
        if !grad.all_finite() {
            return Err(Error::Divergence(format!("instance {}: non-finite offset gradient", instance.id)));
        }
        opt.step(&mut offsets, &grad, &lrs)?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate_dataset, ProblemKind};
    use crate::policy::{PolicyConfig, Temperature};
    use crate::search::sampling_search;

    #[test]
    fn frozen_configuration_equals_sampling() {
        let inst = generate_dataset(ProblemKind::Tsp, 8, 1, 2).unwrap().instances.remove(0);
        let mut cfg = PolicyConfig::new(ProblemKind::Tsp);
        cfg.dim = 16;
        cfg.heads = 2;
        cfg.ff = 32;
        let params = PolicyParams::init(cfg, 1);
        let budget = BudgetSpec::new(5, 4, Temperature::Softmax(1.0));
        let frozen = EasConfig { lr: 0.0, lambda: 0.0, ..EasConfig::default() };
        let e = eas_search(&inst, &params, &budget, &frozen, 5).unwrap();
        let s = sampling_search(&inst, &params, &budget, 5).unwrap();
        assert_eq!(e, s);
        let live = eas_search(&inst, &params, &budget, &EasConfig::default(), 5).unwrap();
        live.check(&inst, &budget).unwrap();
    }
}

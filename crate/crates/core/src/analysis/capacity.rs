use serde::Serialize;

use super::grid::{AnalyticSurrogate, EntryScorer};
use crate::error::{Error, Result};
use crate::instances::Instance;
use crate::nn::logsumexp;
use crate::policy::{rollout, PolicyParams, Temperature};
use crate::rng;

/// Comparison at one decision point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapacityCase {
    /// `adv * (onehot(taken) - p)`.
    pub reinforce: Vec<f64>,
    /// One-hot aggregated increment produced by the analytic surrogate.
    pub surrogate: Vec<f64>,
    /// `|reinforce - surrogate|` on the taken action.
    pub taken_deviation: f64,
    /// `reinforce - surrogate` off the taken action, which is `-adv * p(b)`:
    /// one-hot aggregation cannot express it.
    pub off_action_residual: Vec<f64>,
}

/// Compare the REINFORCE logit gradient with the surrogate increment for
/// logits `logits` (masked entries at the masking constant), taken action
/// `taken` and advantage `adv`.
pub fn capacity_case(logits: &[f64], taken: usize, adv: f64) -> Result<CapacityCase> {
    if taken >= logits.len() {
        return Err(Error::contract("taken action out of range"));
    }
    let lse = logsumexp(logits);
    let p: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    let reinforce: Vec<f64> = p.iter().enumerate().map(|(j, &pj)| adv * ((j == taken) as u8 as f64 - pj)).collect();
    let mut row = [0.0; crate::memory::FULL_FEATURES];
    row[0] = logits[taken] - lse;
    row[1] = adv;
    let mut surrogate = vec![0.0; logits.len()];
    surrogate[taken] = AnalyticSurrogate.score(&row);
    let off_action_residual = reinforce
        .iter()
        .zip(&surrogate)
        .enumerate()
        .map(|(j, (r, s))| if j == taken { 0.0 } else { r - s })
        .collect();
    Ok(CapacityCase {
        taken_deviation: (reinforce[taken] - surrogate[taken]).abs(),
        reinforce,
        surrogate,
        off_action_residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapacityReport {
    pub cases: usize,
    pub max_taken_deviation: f64,
    /// Largest `|adv * p(b)|` over off-action entries.
    pub max_off_action_residual: f64,
}

/// Roll out the policy on a small instance and run [`capacity_case`] at
/// every step with advantage `adv`.
pub fn reinforce_capacity_check(instance: &Instance, params: &PolicyParams, adv: f64, seed: u64) -> Result<CapacityReport> {
    if instance.n() > 6 {
        return Err(Error::validation("the capacity check expects an instance with at most 6 nodes"));
    }
    let first = match instance.kind {
        crate::instances::ProblemKind::Tsp => 0,
        crate::instances::ProblemKind::Cvrp => 1,
    };
    let mut r = rng::stream(seed, &[rng::domain::PROBE]);
    let traj = rollout(instance, first, params, Temperature::Softmax(1.0), &mut r, None)?;
    let enc = crate::policy::Encoded::new(instance, params);
    let mut report = CapacityReport { cases: 0, max_taken_deviation: 0.0, max_off_action_residual: 0.0 };
    let mut state = crate::env::State::reset(instance, first)?;
    for &a in &traj.actions {
        let logits = crate::policy::step_logits(instance, params, &enc.ctx, &state, None)?;
        let c = capacity_case(&logits, a, adv)?;
        report.cases += 1;
        report.max_taken_deviation = report.max_taken_deviation.max(c.taken_deviation);
        let off = c.off_action_residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        report.max_off_action_residual = report.max_off_action_residual.max(off);
        state.apply(instance, a)?;
    }
    Ok(report)
}

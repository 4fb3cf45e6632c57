use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::decoder::{DecoderContext, DecoderGrads, StepCache, StepInput};
use super::encoder::{encode_backward, encode_with_cache, EncoderCache};
use super::{PolicyGradients, PolicyParams};
use crate::env::{State, Trajectory, MASKED_LOGIT};
use crate::error::{Error, Result};
use crate::instances::{Instance, ProblemKind};
use crate::memory::{MemoryNet, MemoryReader};
use crate::nn::logsumexp;
use crate::rng::Stream;

/// Sampling temperature applied to the final logits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Temperature {
    /// Argmax with lowest-index tie-break.
    Greedy,
    Softmax(f64),
}

impl Temperature {
    /// Divisor used for log-probabilities (1 for greedy).
    pub fn value(self) -> f64 {
        match self {
            Temperature::Greedy => 1.0,
            Temperature::Softmax(t) => t,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("greedy") || s == "0" {
            return Ok(Temperature::Greedy);
        }
        let t: f64 = s.parse().map_err(|_| Error::validation(format!("bad temperature `{s}`")))?;
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::validation(format!("temperature must be positive, got {t}")));
        }
        Ok(Temperature::Softmax(t))
    }
}

impl std::fmt::Display for Temperature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Temperature::Greedy => f.write_str("greedy"),
            Temperature::Softmax(t) => write!(f, "{t}"),
        }
    }
}

fn any_feasible(logits: &[f64]) -> bool {
    logits.iter().any(|&l| l > MASKED_LOGIT * 0.5)
}

/// Draw an action from `softmax(logits / T)` and return its log-probability.
pub fn sample_action(logits: &[f64], temperature: Temperature, rng: &mut Stream) -> Result<(usize, f64)> {
    if !any_feasible(logits) {
        return Err(Error::contract("all actions are masked"));
    }
    match temperature {
        Temperature::Greedy => {
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            Ok((best, logits[best] - logsumexp(logits)))
        }
        Temperature::Softmax(t) => {
            if !(t > 0.0) {
                return Err(Error::contract("temperature must be positive"));
            }
            let lse = logsumexp(&logits.iter().map(|l| l / t).collect::<Vec<_>>());
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, &l) in logits.iter().enumerate() {
                let p = (l / t - lse).exp();
                if p <= 0.0 {
                    continue;
                }
                last = i;
                acc += p;
                if u < acc {
                    return Ok((i, l / t - lse));
                }
            }
            Ok((last, logits[last] / t - lse))
        }
    }
}

fn step_input(instance: &Instance, state: &State) -> StepInput {
    let capacity = match instance.kind {
        ProblemKind::Tsp => 0.0,
        ProblemKind::Cvrp => state.remaining_capacity as f64 / instance.capacity as f64,
    };
    StepInput { current: state.position, start: state.start_point, capacity }
}

/// Encoder activations plus the decoder context built from them.
pub struct Encoded {
    pub cache: EncoderCache,
    pub ctx: DecoderContext,
}

impl Encoded {
    pub fn new(instance: &Instance, params: &PolicyParams) -> Self {
        let cache = encode_with_cache(instance, params);
        let ctx = DecoderContext::new(params, cache.output.clone());
        Encoded { cache, ctx }
    }

    /// Decoder context over `embeddings + offsets` (per-instance adaptation).
    pub fn with_offsets(instance: &Instance, params: &PolicyParams, offsets: &Array2<f64>) -> Self {
        let cache = encode_with_cache(instance, params);
        let ctx = DecoderContext::new(params, &cache.output + offsets);
        Encoded { cache, ctx }
    }

    /// Backpropagate context gradients through the decoder and encoder.
    pub fn backward(&self, params: &PolicyParams, acc: DecoderGrads, grads: &mut PolicyParams) {
        let demb = self.ctx.context_backward(params, acc, grads);
        encode_backward(params, &self.cache, demb, grads);
    }
}

/// Reusable per-rollout buffers.
pub struct RolloutScratch {
    mask: Vec<bool>,
    logits: Vec<f64>,
    correction: Vec<f64>,
}

impl RolloutScratch {
    pub fn new(n: usize) -> Self {
        RolloutScratch { mask: vec![false; n], logits: vec![0.0; n], correction: vec![0.0; n] }
    }
}

/// Base logits plus memory correction on feasible entries. Returns the
/// correction vector in `scratch.correction`.
fn final_logits(
    instance: &Instance,
    params: &PolicyParams,
    ctx: &DecoderContext,
    state: &State,
    memory: Option<&MemoryReader>,
    scratch: &mut RolloutScratch,
    cache: Option<&mut StepCache>,
) -> Result<StepInput> {
    state.mask_into(instance, &mut scratch.mask)?;
    let input = step_input(instance, state);
    ctx.logits(params, input, &scratch.mask, &mut scratch.logits, cache);
    scratch.correction.fill(0.0);
    if let Some(m) = memory {
        m.correction_into(state.start_point, state.position, &mut scratch.correction)?;
        for j in 0..scratch.logits.len() {
            if scratch.mask[j] {
                scratch.logits[j] += scratch.correction[j];
            }
        }
    }
    Ok(input)
}

/// Roll out one complete solution on an already-encoded instance.
#[allow(clippy::too_many_arguments)]
pub fn rollout_with(
    instance: &Instance,
    params: &PolicyParams,
    ctx: &DecoderContext,
    start_point: usize,
    temperature: Temperature,
    rng: &mut Stream,
    memory: Option<&MemoryReader>,
    attempt_index: usize,
) -> Result<Trajectory> {
    let mut state = State::reset(instance, start_point)?;
    let mut scratch = RolloutScratch::new(instance.n());
    let horizon = crate::env::horizon(instance);
    let mut actions = Vec::with_capacity(horizon);
    let mut logps = Vec::with_capacity(horizon);
    let mut taken = Vec::with_capacity(horizon);
    loop {
        final_logits(instance, params, ctx, &state, memory, &mut scratch, None)?;
        let (a, logp) = sample_action(&scratch.logits, temperature, rng)?;
        actions.push(a);
        logps.push(logp);
        taken.push(scratch.correction[a]);
        if state.apply(instance, a)? {
            break;
        }
    }
    let ret = -instance.cost(&state.solution())?;
    Ok(Trajectory {
        instance_id: instance.id,
        kind: instance.kind,
        start_point,
        actions,
        action_logps: logps,
        memory_logits_taken: taken,
        ret,
        attempt_index,
    })
}

/// Encode `instance` and roll out one solution.
pub fn rollout(
    instance: &Instance,
    start_point: usize,
    params: &PolicyParams,
    temperature: Temperature,
    rng: &mut Stream,
    memory: Option<&MemoryReader>,
) -> Result<Trajectory> {
    let enc = Encoded::new(instance, params);
    rollout_with(instance, params, &enc.ctx, start_point, temperature, rng, memory, 0)
}

/// Replay `traj` and accumulate the gradient of `weight * sum_t log pi(a_t | s_t)`.
///
/// With `check_logps`, the replayed log-probabilities must reproduce the
/// stored ones; a mismatch means the parameters or memory changed since the
/// rollout. Returns the replayed log-probability sum.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_trajectory_grad(
    instance: &Instance,
    params: &PolicyParams,
    ctx: &DecoderContext,
    traj: &Trajectory,
    weight: f64,
    temperature: f64,
    memory: Option<&MemoryReader>,
    check_logps: bool,
    mut policy_grads: Option<(&mut DecoderGrads, &mut PolicyParams)>,
    mut net_grads: Option<&mut MemoryNet>,
) -> Result<f64> {
    if traj.instance_id != instance.id {
        return Err(Error::contract("trajectory belongs to a different instance"));
    }
    let n = instance.n();
    let mut state = State::reset(instance, traj.start_point)?;
    let mut scratch = RolloutScratch::new(n);
    let mut cache = StepCache::default();
    let mut dlogits = vec![0.0; n];
    let mut total = 0.0;
    for (t, &a) in traj.actions.iter().enumerate() {
        let step_cache = if policy_grads.is_some() { Some(&mut cache) } else { None };
        let input = final_logits(instance, params, ctx, &state, memory, &mut scratch, step_cache)?;
        let z: Vec<f64> = scratch.logits.iter().map(|l| l / temperature).collect();
        let lse = logsumexp(&z);
        let logp = z[a] - lse;
        if check_logps && (logp - traj.action_logps[t]).abs() > 1e-9 * (1.0 + logp.abs()) {
            return Err(Error::contract(format!(
                "stale trajectory: replayed log-probability {logp} differs from recorded {}",
                traj.action_logps[t]
            )));
        }
        total += logp;
        if weight != 0.0 {
            for j in 0..n {
                dlogits[j] = if scratch.mask[j] {
                    let p = (z[j] - lse).exp();
                    weight * ((j == a) as u8 as f64 - p) / temperature
                } else {
                    0.0
                };
            }
            if let Some((acc, grads)) = policy_grads.as_mut() {
                ctx.step_backward(params, input, &scratch.mask, &cache, &dlogits, acc, grads);
            }
            if let (Some(m), Some(ng)) = (memory, net_grads.as_deref_mut()) {
                m.backprop(state.start_point, state.position, &dlogits, ng)?;
            }
        }
        state.apply(instance, a)?;
    }
    if !state.is_terminal() {
        return Err(Error::contract("trajectory does not reach a terminal state"));
    }
    Ok(total)
}

/// `sum_t log pi(a_t | s_t)` of a recorded trajectory under `params`.
pub fn trajectory_logp(
    instance: &Instance,
    params: &PolicyParams,
    traj: &Trajectory,
    temperature: f64,
    memory: Option<&MemoryReader>,
) -> Result<f64> {
    let enc = Encoded::new(instance, params);
    accumulate_trajectory_grad(instance, params, &enc.ctx, traj, 0.0, temperature, memory, false, None, None)
}

/// Exact gradient of `sum_k w_k sum_t log pi(a_t | s_t)` over trajectories
/// of one instance.
pub fn weighted_logp_grad(
    instance: &Instance,
    params: &PolicyParams,
    trajectories: &[Trajectory],
    weights: &[f64],
    temperature: f64,
) -> Result<PolicyGradients> {
    if trajectories.len() != weights.len() {
        return Err(Error::validation(format!(
            "{} trajectories but {} weights",
            trajectories.len(),
            weights.len()
        )));
    }
    let enc = Encoded::new(instance, params);
    let mut acc = DecoderGrads::new(instance.n(), params.config.dim);
    let mut out = PolicyGradients::zeros(params);
    for (traj, &w) in trajectories.iter().zip(weights) {
        accumulate_trajectory_grad(
            instance,
            params,
            &enc.ctx,
            traj,
            w,
            temperature,
            None,
            true,
            Some((&mut acc, &mut out.grads)),
            None,
        )?;
    }
    enc.backward(params, acc, &mut out.grads);
    out.count = trajectories.len();
    Ok(out)
}

/// Masked logits at `state`, including the memory correction when given.
pub fn step_logits(
    instance: &Instance,
    params: &PolicyParams,
    ctx: &DecoderContext,
    state: &State,
    memory: Option<&MemoryReader>,
) -> Result<Vec<f64>> {
    let mut scratch = RolloutScratch::new(instance.n());
    final_logits(instance, params, ctx, state, memory, &mut scratch, None)?;
    Ok(scratch.logits)
}

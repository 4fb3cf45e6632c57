//! Checks shared by the integration tests and the acceptance run. Each
//! returns the worst value it observed so callers pick the threshold.

use super::*;
use memento::analysis::capacity_case;
use memento::env::{State, MASKED_LOGIT};
use memento::memory::{correction_logits, memory_net_grad, Memory, MemoryReader, RetrievalRecord};
use memento::policy::{rollout, rollout_with, step_logits, trajectory_logp, weighted_logp_grad, Encoded, Temperature};
use memento::rng;
use memento::instances::oracle::brute_force;
use memento::search::{evaluate, remaining_budget, start_points, BudgetSpec, MemoryConfig, Strategy};
use memento::training::{memento_loss_grad, pretrain, recorded_loss, recorded_loss_grad, EpisodeConfig, PretrainConfig};
use ndarray::Array2;
use rand::Rng;

/// Weighted trajectory log-likelihood of three tempered rollouts.
pub fn policy_logp_error(kind: ProblemKind) -> f64 {
    let inst = micro_instance(kind, 1);
    let params = micro_policy(kind, 3);
    let first = if kind == ProblemKind::Tsp { 0 } else { 1 };
    let mut r = rng::stream(5, &[]);
    let trajs: Vec<_> = (0..3)
        .map(|k| rollout(&inst, first + k, &params, Temperature::Softmax(1.3), &mut r, None).unwrap())
        .collect();
    let weights = [0.7, -1.1, 0.4];
    let g = weighted_logp_grad(&inst, &params, &trajs, &weights, 1.3).unwrap();
    let num = fd_gradient(&params.to_flat(), FD_H, |p| {
        let mut q = params.clone();
        q.set_flat(p);
        trajs.iter().zip(&weights).map(|(t, w)| w * trajectory_logp(&inst, &q, t, 1.3, None).unwrap()).sum()
    });
    max_rel_err(&g.grads.to_flat(), &num, REL_FLOOR)
}

pub fn random_records(net: &MemoryNet, seed: u64) -> Vec<RetrievalRecord> {
    let mut r = rng::stream(seed, &[]);
    (0..4)
        .map(|_| {
            let k = r.gen_range(1..6);
            RetrievalRecord {
                fingerprint: net.fingerprint(),
                actions: (0..k).map(|_| r.gen_range(0..5)).collect(),
                features: Array2::from_shape_fn((k, 7), |_| r.gen_range(-3.0..1.0)),
                upstream: (0..5).map(|_| r.gen_range(-1.0..1.0)).collect(),
            }
        })
        .collect()
}

/// Memory-net parameters through the correction logits.
pub fn memory_net_error() -> f64 {
    let net = loud_net(FeatureSet::D, 2);
    let records = random_records(&net, 8);
    let g = memory_net_grad(&records, &net).unwrap();
    let num = fd_gradient(&net.to_flat(), FD_H, |p| {
        let mut m = net.clone();
        m.set_flat(p);
        records
            .iter()
            .map(|rec| {
                let l = correction_logits(&rec.actions, &rec.features, &m, 5).unwrap();
                l.iter().zip(&rec.upstream).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum()
    });
    max_rel_err(&g.to_flat(), &num, REL_FLOOR)
}

pub fn micro_episode() -> EpisodeConfig {
    EpisodeConfig {
        budget: 3,
        starts: 3,
        eps: 0.01,
        temperature: 1.0,
        memory: MemoryConfig::default(),
        policy_grads: true,
    }
}

/// Training loss over recorded episodes: `(policy error, memory-net error)`.
/// Also checks the recorded loss reproduces the live one and that the
/// replayed gradient equals the live gradient.
pub fn joint_loss_errors(kind: ProblemKind) -> (f64, f64) {
    let insts: Vec<_> = (0..2).map(|s| micro_instance(kind, 10 + s)).collect();
    let params = micro_policy(kind, 4);
    let net = loud_net(FeatureSet::D, 6);
    let (g, records) = memento_loss_grad(&insts, &params, &net, &micro_episode(), 21, true).unwrap();
    assert!(g.loss > 0.0, "{kind}: micro-setup must contain an improving attempt");
    let l0 = recorded_loss(&records, &params, &net).unwrap();
    assert!((l0 - g.loss).abs() < 1e-12 * (1.0 + l0.abs()));

    let num = fd_gradient(&params.to_flat(), FD_H, |p| {
        let mut q = params.clone();
        q.set_flat(p);
        recorded_loss(&records, &q, &net).unwrap()
    });
    let policy_err = max_rel_err(&g.policy.as_ref().unwrap().to_flat(), &num, REL_FLOOR);

    let num = fd_gradient(&net.to_flat(), FD_H, |p| {
        let mut m = net.clone();
        m.set_flat(p);
        recorded_loss(&records, &params, &m).unwrap()
    });
    let net_err = max_rel_err(&g.net.to_flat(), &num, REL_FLOOR);

    let (rp, rn) = recorded_loss_grad(&records, &params, &net).unwrap();
    assert!(max_rel_err(&rp.to_flat(), &g.policy.unwrap().to_flat(), 1e-12) < 1e-10);
    assert!(max_rel_err(&rn.to_flat(), &g.net.to_flat(), 1e-12) < 1e-10);
    (policy_err, net_err)
}

/// Independent feasibility check of a solution in the environment encoding.
pub fn feasible(inst: &Instance, sol: &[usize]) -> bool {
    let n = inst.n();
    match inst.kind {
        ProblemKind::Tsp => {
            let mut seen = vec![false; n];
            sol.len() == n && sol.iter().all(|&v| v < n && !std::mem::replace(&mut seen[v], true))
        }
        ProblemKind::Cvrp => {
            if sol.first() != Some(&0) || sol.last() != Some(&0) {
                return false;
            }
            let mut seen = vec![false; n];
            let mut load = 0u32;
            for w in sol.windows(2) {
                if w[1] >= n || (w[0] == 0 && w[1] == 0) {
                    return false;
                }
                if w[1] == 0 {
                    load = 0;
                    continue;
                }
                if std::mem::replace(&mut seen[w[1]], true) {
                    return false;
                }
                load += inst.demands[w[1]];
                if load > inst.capacity {
                    return false;
                }
            }
            seen.iter().skip(1).all(|&s| s)
        }
    }
}

/// Uniformly random feasible actions straight from the environment mask.
pub fn random_solution(inst: &Instance, start: usize, r: &mut rng::Stream) -> Vec<usize> {
    let mut state = State::reset(inst, start).unwrap();
    loop {
        let mask = state.action_mask(inst).unwrap();
        let open: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
        let a = open[r.gen_range(0..open.len())];
        if state.apply(inst, a).unwrap() {
            return state.solution();
        }
    }
}

/// `rollouts` solutions from each of a random, a greedy and a memory-guided
/// policy. Returns `(constructed, infeasible)`.
pub fn feasibility_sweep(kind: ProblemKind, n: usize, rollouts: usize, seed: u64) -> (usize, usize) {
    let mut cfg = PolicyConfig::new(kind);
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.ff = 32;
    let params = PolicyParams::init(cfg, seed);
    let net = loud_net(FeatureSet::D, seed);
    let insts = generate_dataset(kind, n, rollouts.div_ceil(n - 1), seed).unwrap().instances;
    let mut built = 0;
    let mut bad = 0;
    let mut r = rng::stream(seed, &[1]);
    let mut check = |inst: &Instance, sol: &[usize]| {
        built += 1;
        bad += !feasible(inst, sol) as usize;
    };
    // One rollout per (instance, start point) for the random and greedy policies.
    let pairs = insts.iter().flat_map(|i| start_points(i, n - 1).unwrap().into_iter().map(move |s| (i, s)));
    for (inst, s) in pairs.clone().take(rollouts) {
        check(inst, &random_solution(inst, s, &mut r));
    }
    let mut last: Option<(u64, Encoded)> = None;
    for (inst, s) in pairs.take(rollouts) {
        if last.as_ref().map(|l| l.0) != Some(inst.id) {
            last = Some((inst.id, Encoded::new(inst, &params)));
        }
        let ctx = &last.as_ref().unwrap().1.ctx;
        let t = rollout_with(inst, &params, ctx, s, Temperature::Greedy, &mut r, None, 0).unwrap();
        check(inst, &t.solution());
    }
    // Memory-guided sampling: full multi-attempt searches on a few instances.
    let attempts = 10;
    let mut guided = 0;
    for inst in &insts {
        if guided >= rollouts {
            break;
        }
        let enc = Encoded::new(inst, &params);
        let starts = start_points(inst, n - 1).unwrap();
        let mut memory = Memory::new(inst.n(), 40, false);
        for a in 0..attempts {
            let reader = MemoryReader::new(&memory, &net, remaining_budget(a, attempts));
            let mut trajs = Vec::new();
            for &s in starts.iter().take(rollouts - guided) {
                let t = rollout_with(inst, &params, &enc.ctx, s, Temperature::Softmax(1.0), &mut r, Some(&reader), a).unwrap();
                check(inst, &t.solution());
                trajs.push(t);
            }
            guided += trajs.len();
            for t in &trajs {
                memory.write_trajectory(t, a, attempts).unwrap();
            }
            memory.finish_attempt();
        }
    }
    (built, bad)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = memento::nn::logsumexp(logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// `(max |p_empty - p_base|, max per-step KL(p_base || p_fresh))` where
/// `p_empty` reads an empty memory and `p_fresh` reads a populated memory
/// through a freshly initialised net.
pub fn neutrality(kind: ProblemKind, n: usize, seed: u64) -> (f64, f64) {
    let mut cfg = PolicyConfig::new(kind);
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.ff = 32;
    let params = PolicyParams::init(cfg, seed);
    let net = MemoryNet::init(FeatureSet::D, seed);
    let mut max_diff: f64 = 0.0;
    let mut max_kl: f64 = 0.0;
    for inst in generate_dataset(kind, n, 5, seed).unwrap().instances {
        let enc = Encoded::new(&inst, &params);
        let starts = start_points(&inst, n - 1).unwrap();
        let budget = 8;
        let empty = Memory::new(inst.n(), 40, false);
        let mut memory = Memory::new(inst.n(), 40, false);
        for a in 0..budget {
            let reader = MemoryReader::new(&memory, &net, remaining_budget(a, budget));
            let fresh = MemoryReader::new(&empty, &net, remaining_budget(a, budget));
            let mut trajs = Vec::new();
            for &s in &starts {
                let mut r = rng::stream(seed, &[a as u64, s as u64]);
                let t = rollout_with(&inst, &params, &enc.ctx, s, Temperature::Softmax(1.0), &mut r, Some(&reader), a).unwrap();
                let mut state = State::reset(&inst, s).unwrap();
                for &act in &t.actions {
                    let base = softmax(&step_logits(&inst, &params, &enc.ctx, &state, None).unwrap());
                    let e = softmax(&step_logits(&inst, &params, &enc.ctx, &state, Some(&fresh)).unwrap());
                    let m = softmax(&step_logits(&inst, &params, &enc.ctx, &state, Some(&reader)).unwrap());
                    for j in 0..base.len() {
                        max_diff = max_diff.max((base[j] - e[j]).abs());
                    }
                    let kl: f64 = base.iter().zip(&m).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (p / q).ln()).sum();
                    max_kl = max_kl.max(kl);
                    state.apply(&inst, act).unwrap();
                }
                trajs.push(t);
            }
            for t in &trajs {
                memory.write_trajectory(t, a, budget).unwrap();
            }
            memory.finish_attempt();
        }
    }
    (max_diff, max_kl)
}

/// Random decision points with masked entries: largest deviation between
/// the analytic surrogate increment and the REINFORCE logit gradient on the
/// taken action.
pub fn capacity_sweep(cases: usize, seed: u64) -> f64 {
    let mut r = rng::stream(seed, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = r.gen_range(2..8);
        let mut logits: Vec<f64> = (0..n).map(|_| r.gen_range(-4.0..4.0)).collect();
        let taken = r.gen_range(0..n);
        for (j, l) in logits.iter_mut().enumerate() {
            if j != taken && r.gen_bool(0.3) {
                *l = MASKED_LOGIT;
            }
        }
        let adv = r.gen_range(-3.0..3.0);
        let c = capacity_case(&logits, taken, adv).unwrap();
        worst = worst.max(c.taken_deviation);
    }
    worst
}

/// Small TSP policy pretrained on `n`-node instances.
pub fn pretrained_tsp(n: usize, steps: usize, seed: u64) -> PolicyParams {
    let mut policy = PolicyConfig::new(ProblemKind::Tsp);
    policy.dim = 32;
    policy.ff = 64;
    let cfg = PretrainConfig { policy, n, batch: 32, starts: n, steps, lr: 1e-3, seed, timing: false };
    pretrain(&cfg, &mut |_| {}).unwrap()
}

/// Gaps (percent) of sampling with `attempts x n` trajectories against the
/// exhaustive optimum, on `count` TSP instances of `n` nodes.
pub fn sampling_gaps_vs_brute_force(params: &PolicyParams, n: usize, count: usize, attempts: usize, seed: u64) -> Vec<f64> {
    let ds = generate_dataset(ProblemKind::Tsp, n, count, seed).unwrap();
    let refs: Vec<f64> = ds.instances.iter().map(|i| brute_force(i).unwrap().cost).collect();
    let budget = BudgetSpec::new(attempts, n, Temperature::Softmax(1.0));
    let rep = evaluate(&ds, params, &Strategy::Sampling, &budget, seed, Some(&refs), false).unwrap();
    rep.rows.iter().map(|r| r.gap.unwrap()).collect()
}

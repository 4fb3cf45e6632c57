#![allow(dead_code)]

pub mod checks;

pub use memento::instances::{generate_dataset, Instance, ProblemKind};
pub use memento::memory::{FeatureSet, MemoryNet};
pub use memento::nn::Params;
pub use memento::policy::{PolicyConfig, PolicyParams};

/// Central differences of `f` at `x`.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over coordinates.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub const FD_H: f64 = 1e-5;
/// Below this magnitude a coordinate is judged by absolute error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn micro_policy(kind: ProblemKind, seed: u64) -> PolicyParams {
    let mut cfg = PolicyConfig::new(kind);
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.ff = 16;
    PolicyParams::init(cfg, seed)
}

/// Memory net with an enlarged output layer so corrections are not negligible.
pub fn loud_net(features: FeatureSet, seed: u64) -> MemoryNet {
    let mut net = MemoryNet::init(features, seed);
    for w in net.w3.iter_mut() {
        *w *= 300.0;
    }
    net.b3[0] *= 300.0;
    net
}

pub fn micro_instance(kind: ProblemKind, seed: u64) -> Instance {
    generate_dataset(kind, 5, 1, seed).unwrap().instances.remove(0)
}

pub fn flat<P: Params>(p: &P) -> Vec<f64> {
    p.to_flat()
}

//! Attention encoder / pointer decoder construction policy.
//!
//! The encoder is a stack of self-attention blocks without positional
//! encodings, so it is equivariant to node relabeling. The decoder builds a
//! query from the graph mean, the current node, the start node and the
//! remaining capacity, attends over the nodes (glimpse), and scores each node
//! with a tanh-clipped dot product.
//!
//! All backward passes are written by hand and checked against finite
//! differences in the test suite.

pub mod decoder;
pub mod encoder;
mod rollout;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::instances::ProblemKind;
use crate::nn::{uniform_matrix, LayerNorm, Linear, Params};
use crate::rng::{self, domain, Stream};

pub use decoder::{DecoderContext, DecoderGrads};
pub use encoder::{encode, encode_with_cache, EncoderCache};
pub use rollout::{
    accumulate_trajectory_grad, rollout, rollout_with, sample_action, step_logits, trajectory_logp, weighted_logp_grad,
    Encoded, RolloutScratch, Temperature,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: ProblemKind,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    /// Logits are `clip * tanh(score)`.
    pub clip: f64,
}

impl PolicyConfig {
    pub fn new(kind: ProblemKind) -> Self {
        PolicyConfig { kind, dim: 64, layers: 2, heads: 4, ff: 128, clip: 10.0 }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(crate::Error::validation(format!(
                "model dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.ff == 0 || !(self.clip > 0.0) {
            return Err(crate::Error::validation("ff width and clip must be positive"));
        }
        Ok(())
    }

    pub fn input_features(&self) -> usize {
        match self.kind {
            ProblemKind::Tsp => 2,
            ProblemKind::Cvrp => 3,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Linear,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
}

/// Parameters of the base policy. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub embed: Linear,
    /// CVRP only: separate projection of the depot coordinates.
    pub embed_depot: Option<Linear>,
    pub layers: Vec<EncoderLayer>,
    pub dec_key: Array2<f64>,
    pub dec_value: Array2<f64>,
    /// `(3 * dim + 1) x dim`: rows for graph mean, current node, start node, capacity.
    pub dec_query: Array2<f64>,
    pub dec_out: Linear,
}

impl PolicyParams {
    pub fn init(config: PolicyConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[domain::INIT, 0]);
        Self::build(config, &mut r)
    }

    fn build(config: PolicyConfig, r: &mut Stream) -> Self {
        let d = config.dim;
        let attn = 1.0 / (d as f64).sqrt();
        let layers = (0..config.layers)
            .map(|_| EncoderLayer {
                wq: uniform_matrix(d, d, attn, r),
                wk: uniform_matrix(d, d, attn, r),
                wv: uniform_matrix(d, d, attn, r),
                wo: Linear::new(d, d, r),
                norm1: LayerNorm::new(d),
                ff1: Linear::new(d, config.ff, r),
                ff2: Linear::new(config.ff, d, r),
                norm2: LayerNorm::new(d),
            })
            .collect();
        let embed = Linear::new(config.input_features(), d, r);
        let embed_depot = (config.kind == ProblemKind::Cvrp).then(|| Linear::new(2, d, r));
        PolicyParams {
            embed,
            embed_depot,
            layers,
            dec_key: uniform_matrix(d, d, attn, r),
            dec_value: uniform_matrix(d, d, attn, r),
            dec_query: uniform_matrix(3 * d + 1, d, 1.0 / ((3 * d + 1) as f64).sqrt(), r),
            dec_out: Linear::new(d, d, r),
            config,
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn check_shapes(&self) -> crate::Result<()> {
        let expect = PolicyParams::init(self.config.clone(), 0).shape_table();
        if expect != self.shape_table() {
            return Err(crate::Error::validation("policy parameter shapes do not match the architecture"));
        }
        Ok(())
    }
}

impl Params for PolicyParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.embed.visit("enc.embed", f);
        if let Some(l) = &self.embed_depot {
            l.visit("enc.embed_depot", f);
        }
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("enc.layer{i}");
            f(&format!("{p}.wq"), l.wq.shape(), l.wq.as_slice().unwrap());
            f(&format!("{p}.wk"), l.wk.shape(), l.wk.as_slice().unwrap());
            f(&format!("{p}.wv"), l.wv.shape(), l.wv.as_slice().unwrap());
            l.wo.visit(&format!("{p}.wo"), f);
            l.norm1.visit(&format!("{p}.norm1"), f);
            l.ff1.visit(&format!("{p}.ff1"), f);
            l.ff2.visit(&format!("{p}.ff2"), f);
            l.norm2.visit(&format!("{p}.norm2"), f);
        }
        f("dec.key", self.dec_key.shape(), self.dec_key.as_slice().unwrap());
        f("dec.value", self.dec_value.shape(), self.dec_value.as_slice().unwrap());
        f("dec.query", self.dec_query.shape(), self.dec_query.as_slice().unwrap());
        self.dec_out.visit("dec.out", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.embed.visit_mut("enc.embed", f);
        if let Some(l) = &mut self.embed_depot {
            l.visit_mut("enc.embed_depot", f);
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = format!("enc.layer{i}");
            f(&format!("{p}.wq"), l.wq.as_slice_mut().unwrap());
            f(&format!("{p}.wk"), l.wk.as_slice_mut().unwrap());
            f(&format!("{p}.wv"), l.wv.as_slice_mut().unwrap());
            l.wo.visit_mut(&format!("{p}.wo"), f);
            l.norm1.visit_mut(&format!("{p}.norm1"), f);
            l.ff1.visit_mut(&format!("{p}.ff1"), f);
            l.ff2.visit_mut(&format!("{p}.ff2"), f);
            l.norm2.visit_mut(&format!("{p}.norm2"), f);
        }
        f("dec.key", self.dec_key.as_slice_mut().unwrap());
        f("dec.value", self.dec_value.as_slice_mut().unwrap());
        f("dec.query", self.dec_query.as_slice_mut().unwrap());
        self.dec_out.visit_mut("dec.out", f);
    }
}

/// Gradient of an objective with respect to [`PolicyParams`].
#[derive(Clone, Debug)]
pub struct PolicyGradients {
    pub grads: PolicyParams,
    /// Number of trajectories accumulated.
    pub count: usize,
}

impl PolicyGradients {
    pub fn zeros(params: &PolicyParams) -> Self {
        PolicyGradients { grads: params.zeros_like(), count: 0 }
    }

    pub fn merge(&mut self, other: &PolicyGradients) {
        self.grads.add_scaled(1.0, &other.grads);
        self.count += other.count;
    }
}

pub(crate) fn row(v: &[f64], i: usize, d: usize) -> &[f64] {
    &v[i * d..(i + 1) * d]
}

pub(crate) fn mean_rows(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(ndarray::Axis(0)).unwrap()
}

//! Adam with per-group learning rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Params;

/// Parameter groups, keyed by tensor-name prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Memory,
    Encoder,
    Decoder,
}

impl Group {
    pub fn of(name: &str) -> Group {
        if name.starts_with("mem.") {
            Group::Memory
        } else if name.starts_with("enc.") {
            Group::Encoder
        } else {
            Group::Decoder
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub memory: f64,
    pub encoder: f64,
    pub decoder: f64,
}

impl LearningRates {
    pub fn get(&self, g: Group) -> f64 {
        match g {
            Group::Memory => self.memory,
            Group::Encoder => self.encoder,
            Group::Decoder => self.decoder,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    /// One bias-corrected update of `params` using `grads` (same structure).
    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P, lrs: &LearningRates) -> Result<()> {
        let g = grads.to_flat();
        if g.len() != self.m.len() || params.num_params() != g.len() {
            return Err(Error::contract(format!(
                "optimizer holds {} moments, params have {}, gradients {}",
                self.m.len(),
                params.num_params(),
                g.len()
            )));
        }
        if !g.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut pos = 0;
        params.visit_mut(&mut |name, w| {
            let lr = lrs.get(Group::of(name));
            for (k, x) in w.iter_mut().enumerate() {
                let i = pos + k;
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                if lr != 0.0 {
                    *x -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
            pos += w.len();
        });
        Ok(())
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::FeatureSet;
use crate::error::{Error, Result};
use crate::nn::{gelu, gelu_grad, Params};
use crate::rng::{self, domain};

/// Width of both hidden layers.
pub const HIDDEN: usize = 8;

/// Bound of the uniform init of the output layer, so a fresh net starts
/// close to the unmodified policy.
const OUTPUT_INIT: f64 = 1e-3;

/// Per-entry scorer `F -> 8 -> 8 -> 1` with GELU activations.
///
/// Weights are row-major `in x out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryNet {
    pub features: FeatureSet,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

struct Forward {
    z1: [f64; HIDDEN],
    h1: [f64; HIDDEN],
    z2: [f64; HIDDEN],
    h2: [f64; HIDDEN],
    out: f64,
}

impl MemoryNet {
    pub fn init(features: FeatureSet, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[domain::INIT, 1]);
        let f = features.dim();
        let mut draw = |len: usize, bound: f64| -> Vec<f64> { (0..len).map(|_| r.gen_range(-bound..bound)).collect() };
        let b_in = 1.0 / (f as f64).sqrt();
        let b_hid = 1.0 / (HIDDEN as f64).sqrt();
        MemoryNet {
            features,
            w1: draw(f * HIDDEN, b_in),
            b1: draw(HIDDEN, b_in),
            w2: draw(HIDDEN * HIDDEN, b_hid),
            b2: draw(HIDDEN, b_hid),
            w3: draw(HIDDEN, OUTPUT_INIT),
            b3: draw(1, OUTPUT_INIT),
        }
    }

    /// All-zero parameters; also the gradient accumulator shape.
    pub fn zeros(features: FeatureSet) -> Self {
        let f = features.dim();
        MemoryNet {
            features,
            w1: vec![0.0; f * HIDDEN],
            b1: vec![0.0; HIDDEN],
            w2: vec![0.0; HIDDEN * HIDDEN],
            b2: vec![0.0; HIDDEN],
            w3: vec![0.0; HIDDEN],
            b3: vec![0.0],
        }
    }

    /// Same hidden layers, output layer zeroed so every score is exactly 0.
    pub fn with_zero_output(mut self) -> Self {
        self.w3.fill(0.0);
        self.b3.fill(0.0);
        self
    }

    pub fn check_shapes(&self) -> Result<()> {
        let f = self.features.dim();
        let ok = self.w1.len() == f * HIDDEN
            && self.b1.len() == HIDDEN
            && self.w2.len() == HIDDEN * HIDDEN
            && self.b2.len() == HIDDEN
            && self.w3.len() == HIDDEN
            && self.b3.len() == 1;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("memory net shapes do not match feature subset {}", self.features.name())))
        }
    }

    fn run(&self, x: &[f64]) -> Forward {
        let f = self.features.dim();
        debug_assert_eq!(x.len(), f);
        let mut z1 = [0.0; HIDDEN];
        z1.copy_from_slice(&self.b1);
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.w1[i * HIDDEN..(i + 1) * HIDDEN];
            for j in 0..HIDDEN {
                z1[j] += xi * row[j];
            }
        }
        let h1 = z1.map(gelu);
        let mut z2 = [0.0; HIDDEN];
        z2.copy_from_slice(&self.b2);
        for (i, &hi) in h1.iter().enumerate() {
            let row = &self.w2[i * HIDDEN..(i + 1) * HIDDEN];
            for j in 0..HIDDEN {
                z2[j] += hi * row[j];
            }
        }
        let h2 = z2.map(gelu);
        let out = self.b3[0] + h2.iter().zip(&self.w3).map(|(a, b)| a * b).sum::<f64>();
        Forward { z1, h1, z2, h2, out }
    }

    /// Score of one feature row.
    pub fn forward(&self, x: &[f64]) -> f64 {
        self.run(x).out
    }

    /// Accumulate `upstream * d(score)/d(params)` into `grads`.
    pub fn backward(&self, x: &[f64], upstream: f64, grads: &mut MemoryNet) {
        let fw = self.run(x);
        grads.b3[0] += upstream;
        let mut dz2 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            grads.w3[j] += fw.h2[j] * upstream;
            dz2[j] = self.w3[j] * upstream * gelu_grad(fw.z2[j]);
        }
        let mut dz1 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            let row = &self.w2[i * HIDDEN..(i + 1) * HIDDEN];
            let grow = &mut grads.w2[i * HIDDEN..(i + 1) * HIDDEN];
            let mut dh = 0.0;
            for j in 0..HIDDEN {
                grow[j] += fw.h1[i] * dz2[j];
                dh += row[j] * dz2[j];
            }
            dz1[i] = dh * gelu_grad(fw.z1[i]);
        }
        for j in 0..HIDDEN {
            grads.b2[j] += dz2[j];
            grads.b1[j] += dz1[j];
        }
        for (i, &xi) in x.iter().enumerate() {
            let grow = &mut grads.w1[i * HIDDEN..(i + 1) * HIDDEN];
            for j in 0..HIDDEN {
                grow[j] += xi * dz1[j];
            }
        }
    }

    /// Hash of the parameter bits; used to detect stale retrieval records.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update([self.features.dim() as u8]);
        self.visit(&mut |_, _, v| {
            for x in v {
                h.update(x.to_bits().to_le_bytes());
            }
        });
        h.finalize().into()
    }
}

impl Params for MemoryNet {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let d = self.features.dim();
        f("mem.w1", &[d, HIDDEN], &self.w1);
        f("mem.b1", &[HIDDEN], &self.b1);
        f("mem.w2", &[HIDDEN, HIDDEN], &self.w2);
        f("mem.b2", &[HIDDEN], &self.b2);
        f("mem.w3", &[HIDDEN, 1], &self.w3);
        f("mem.b3", &[1], &self.b3);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("mem.w1", &mut self.w1);
        f("mem.b1", &mut self.b1);
        f("mem.w2", &mut self.w2);
        f("mem.b2", &mut self.b2);
        f("mem.w3", &mut self.w3);
        f("mem.b3", &mut self.b3);
    }
}

/// Sum of per-entry scores grouped by action, over `n_actions` logits.
pub fn correction_logits(actions: &[usize], features: &ndarray::Array2<f64>, net: &MemoryNet, n_actions: usize) -> Result<Vec<f64>> {
    if actions.len() != features.nrows() || features.ncols() != net.features.dim() {
        return Err(Error::contract("feature matrix does not match actions or net input width"));
    }
    let mut out = vec![0.0; n_actions];
    for (a, row) in actions.iter().zip(features.rows()) {
        let slot = out
            .get_mut(*a)
            .ok_or_else(|| Error::contract(format!("action {a} out of range for {n_actions} nodes")))?;
        *slot += net.forward(row.as_slice().unwrap_or(&row.to_vec()));
    }
    Ok(out)
}

/// Inputs of one correction evaluation together with `dL/dl_M` for it.
#[derive(Clone, Debug)]
pub struct RetrievalRecord {
    /// Fingerprint of the net that produced the correction.
    pub fingerprint: [u8; 32],
    pub actions: Vec<usize>,
    pub features: ndarray::Array2<f64>,
    pub upstream: Vec<f64>,
}

/// Gradient of the recorded loss with respect to the net parameters.
pub fn memory_net_grad(records: &[RetrievalRecord], net: &MemoryNet) -> Result<MemoryNet> {
    let fp = net.fingerprint();
    let mut grads = MemoryNet::zeros(net.features);
    for r in records {
        if r.fingerprint != fp {
            return Err(Error::contract("retrieval record was produced by different memory net parameters"));
        }
        for (a, row) in r.actions.iter().zip(r.features.rows()) {
            let up = *r
                .upstream
                .get(*a)
                .ok_or_else(|| Error::contract(format!("action {a} out of range in retrieval record")))?;
            if up != 0.0 {
                net.backward(&row.to_vec(), up, &mut grads);
            }
        }
    }
    Ok(grads)
}

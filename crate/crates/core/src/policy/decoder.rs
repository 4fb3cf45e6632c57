//! Pointer decoder. Everything that depends only on the node embeddings is
//! precomputed once per instance in [`DecoderContext`], so a decoding step
//! costs `O(n * dim)`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{mean_rows, row, PolicyParams};
use crate::env::MASKED_LOGIT;

pub struct DecoderContext {
    pub n: usize,
    pub dim: usize,
    pub heads: usize,
    pub clip: f64,
    pub emb: Array2<f64>,
    mean: Array1<f64>,
    key: Vec<f64>,
    value: Vec<f64>,
    q_mean: Vec<f64>,
    q_cur: Vec<f64>,
    q_start: Vec<f64>,
    q_cap: Vec<f64>,
}

/// What the decoder needs to know about the current state.
#[derive(Clone, Copy, Debug)]
pub struct StepInput {
    pub current: usize,
    pub start: usize,
    pub capacity: f64,
}

/// Per-step activations kept for backward.
#[derive(Clone, Debug, Default)]
pub struct StepCache {
    q: Vec<f64>,
    attn: Vec<f64>,
    glimpse: Vec<f64>,
    g: Vec<f64>,
    tanh: Vec<f64>,
}

/// Gradients with respect to the precomputed context, accumulated over steps.
pub struct DecoderGrads {
    emb: Array2<f64>,
    key: Vec<f64>,
    value: Vec<f64>,
    q_mean: Vec<f64>,
    q_cur: Vec<f64>,
    q_start: Vec<f64>,
    q_cap: Vec<f64>,
}

impl DecoderGrads {
    pub fn new(n: usize, d: usize) -> Self {
        DecoderGrads {
            emb: Array2::zeros((n, d)),
            key: vec![0.0; n * d],
            value: vec![0.0; n * d],
            q_mean: vec![0.0; d],
            q_cur: vec![0.0; n * d],
            q_start: vec![0.0; n * d],
            q_cap: vec![0.0; d],
        }
    }
}

fn flat(a: Array2<f64>) -> Vec<f64> {
    a.as_standard_layout().into_owned().into_raw_vec_and_offset().0
}

fn view(v: &[f64], n: usize, d: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((n, d), v).unwrap()
}

impl DecoderContext {
    pub fn new(params: &PolicyParams, emb: Array2<f64>) -> Self {
        let (n, d) = emb.dim();
        let mean = mean_rows(&emb);
        let wq = &params.dec_query;
        let q_mean = mean.dot(&wq.slice(s![0..d, ..])).to_vec();
        let q_cur = flat(emb.dot(&wq.slice(s![d..2 * d, ..])));
        let q_start = flat(emb.dot(&wq.slice(s![2 * d..3 * d, ..])));
        let q_cap = wq.row(3 * d).to_vec();
        DecoderContext {
            n,
            dim: d,
            heads: params.config.heads,
            clip: params.config.clip,
            key: flat(emb.dot(&params.dec_key)),
            value: flat(emb.dot(&params.dec_value)),
            emb,
            mean,
            q_mean,
            q_cur,
            q_start,
            q_cap,
        }
    }

    /// Masked logits for one step. Infeasible entries get [`MASKED_LOGIT`].
    pub fn logits(
        &self,
        params: &PolicyParams,
        input: StepInput,
        mask: &[bool],
        out: &mut [f64],
        cache: Option<&mut StepCache>,
    ) {
        let (n, d, heads) = (self.n, self.dim, self.heads);
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();

        let mut q = self.q_mean.clone();
        let qc = row(&self.q_cur, input.current, d);
        let qs = row(&self.q_start, input.start, d);
        for k in 0..d {
            q[k] += qc[k] + qs[k] + input.capacity * self.q_cap[k];
        }

        let mut attn = vec![0.0; heads * n];
        let mut glimpse = vec![0.0; d];
        for h in 0..heads {
            let qh = &q[h * dk..(h + 1) * dk];
            let a = &mut attn[h * n..(h + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if mask[j] {
                    let kj = &row(&self.key, j, d)[h * dk..(h + 1) * dk];
                    a[j] = qh.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                    max = max.max(a[j]);
                }
            }
            let mut sum = 0.0;
            for j in 0..n {
                if mask[j] {
                    a[j] = (a[j] - max).exp();
                    sum += a[j];
                }
            }
            let oh = &mut glimpse[h * dk..(h + 1) * dk];
            for j in 0..n {
                if mask[j] {
                    a[j] /= sum;
                    let vj = &row(&self.value, j, d)[h * dk..(h + 1) * dk];
                    for (o, v) in oh.iter_mut().zip(vj) {
                        *o += a[j] * v;
                    }
                }
            }
        }

        let w = params.dec_out.w.as_slice().unwrap();
        let mut g = params.dec_out.b.to_vec();
        for (i, &o) in glimpse.iter().enumerate() {
            if o != 0.0 {
                for (gk, wk) in g.iter_mut().zip(row(w, i, d)) {
                    *gk += o * wk;
                }
            }
        }

        let emb = self.emb.as_slice().unwrap();
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let mut tanh = vec![0.0; n];
        for j in 0..n {
            if mask[j] {
                let u = g.iter().zip(row(emb, j, d)).map(|(x, y)| x * y).sum::<f64>() * inv_sqrt_d;
                tanh[j] = u.tanh();
                out[j] = self.clip * tanh[j];
            } else {
                out[j] = MASKED_LOGIT;
            }
        }

        if let Some(c) = cache {
            *c = StepCache { q, attn, glimpse, g, tanh };
        }
    }

    /// Backward of one step given `dL/dlogits` (zero on masked entries).
    pub fn step_backward(
        &self,
        params: &PolicyParams,
        input: StepInput,
        mask: &[bool],
        cache: &StepCache,
        dlogits: &[f64],
        acc: &mut DecoderGrads,
        grads: &mut PolicyParams,
    ) {
        let (n, d, heads) = (self.n, self.dim, self.heads);
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let emb = self.emb.as_slice().unwrap();

        let mut dg = vec![0.0; d];
        {
            let demb = acc.emb.as_slice_mut().unwrap();
            for j in 0..n {
                if !mask[j] || dlogits[j] == 0.0 {
                    continue;
                }
                let t = cache.tanh[j];
                let du = dlogits[j] * self.clip * (1.0 - t * t) * inv_sqrt_d;
                let ej = row(emb, j, d);
                let dej = &mut demb[j * d..(j + 1) * d];
                for k in 0..d {
                    dg[k] += du * ej[k];
                    dej[k] += du * cache.g[k];
                }
            }
        }

        let w = params.dec_out.w.as_slice().unwrap();
        let mut dglimpse = vec![0.0; d];
        {
            let gw = grads.dec_out.w.as_slice_mut().unwrap();
            for i in 0..d {
                let o = cache.glimpse[i];
                let wi = row(w, i, d);
                let gwi = &mut gw[i * d..(i + 1) * d];
                let mut s = 0.0;
                for k in 0..d {
                    gwi[k] += o * dg[k];
                    s += wi[k] * dg[k];
                }
                dglimpse[i] = s;
            }
            for (b, x) in grads.dec_out.b.iter_mut().zip(&dg) {
                *b += x;
            }
        }

        let mut dq = vec![0.0; d];
        for h in 0..heads {
            let hs = h * dk..(h + 1) * dk;
            let a = &cache.attn[h * n..(h + 1) * n];
            let doh = &dglimpse[hs.clone()];
            let mut da = vec![0.0; n];
            let mut inner = 0.0;
            for j in 0..n {
                if mask[j] {
                    let vj = &row(&self.value, j, d)[hs.clone()];
                    da[j] = doh.iter().zip(vj).map(|(x, y)| x * y).sum();
                    inner += a[j] * da[j];
                    let dvj = &mut acc.value[j * d + h * dk..j * d + (h + 1) * dk];
                    for (dv, o) in dvj.iter_mut().zip(doh) {
                        *dv += a[j] * o;
                    }
                }
            }
            let qh = &cache.q[hs.clone()];
            for j in 0..n {
                if mask[j] {
                    let ds = a[j] * (da[j] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &row(&self.key, j, d)[hs.clone()];
                    for (dqk, kk) in dq[hs.clone()].iter_mut().zip(kj) {
                        *dqk += ds * kk;
                    }
                    let dkj = &mut acc.key[j * d + h * dk..j * d + (h + 1) * dk];
                    for (dkk, qk) in dkj.iter_mut().zip(qh) {
                        *dkk += ds * qk;
                    }
                }
            }
        }

        for k in 0..d {
            acc.q_mean[k] += dq[k];
            acc.q_cur[input.current * d + k] += dq[k];
            acc.q_start[input.start * d + k] += dq[k];
            acc.q_cap[k] += input.capacity * dq[k];
        }
    }

    /// Push accumulated context gradients into the decoder weights and
    /// return `dL/d(embeddings)`.
    pub fn context_backward(&self, params: &PolicyParams, acc: DecoderGrads, grads: &mut PolicyParams) -> Array2<f64> {
        let (n, d) = (self.n, self.dim);
        let wq = &params.dec_query;
        let emb = &self.emb;
        let q_mean = Array1::from(acc.q_mean);
        let q_cur = view(&acc.q_cur, n, d);
        let q_start = view(&acc.q_start, n, d);
        let key = view(&acc.key, n, d);
        let value = view(&acc.value, n, d);

        {
            let mut g = grads.dec_query.slice_mut(s![0..d, ..]);
            g += &self
                .mean
                .view()
                .insert_axis(Axis(1))
                .dot(&q_mean.view().insert_axis(Axis(0)));
        }
        {
            let mut g = grads.dec_query.slice_mut(s![d..2 * d, ..]);
            g += &emb.t().dot(&q_cur);
        }
        {
            let mut g = grads.dec_query.slice_mut(s![2 * d..3 * d, ..]);
            g += &emb.t().dot(&q_start);
        }
        {
            let mut g = grads.dec_query.row_mut(3 * d);
            g += &Array1::from(acc.q_cap);
        }
        grads.dec_key += &emb.t().dot(&key);
        grads.dec_value += &emb.t().dot(&value);

        let dmean = wq.slice(s![0..d, ..]).dot(&q_mean);
        let mut demb = acc.emb;
        demb += &q_cur.dot(&wq.slice(s![d..2 * d, ..]).t());
        demb += &q_start.dot(&wq.slice(s![2 * d..3 * d, ..]).t());
        demb += &key.dot(&params.dec_key.t());
        demb += &value.dot(&params.dec_value.t());
        demb += &(dmean / n as f64).view().insert_axis(Axis(0));
        demb
    }
}

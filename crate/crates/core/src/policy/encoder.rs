use ndarray::{s, Array2, Axis};

use super::{EncoderLayer, PolicyParams};
use crate::instances::{Instance, ProblemKind};
use crate::nn::{softmax_rows, softmax_rows_backward, LayerNormCache};

pub struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    concat: Array2<f64>,
    ln1: LayerNormCache,
    h1: Array2<f64>,
    pre_ff: Array2<f64>,
    act_ff: Array2<f64>,
    ln2: LayerNormCache,
}

/// Forward activations kept for the backward pass.
pub struct EncoderCache {
    features: Array2<f64>,
    layers: Vec<LayerCache>,
    pub output: Array2<f64>,
}

/// Raw node features: `(x, y)` for TSP, `(x, y, demand / capacity)` for CVRP.
pub fn node_features(instance: &Instance) -> Array2<f64> {
    match instance.kind {
        ProblemKind::Tsp => Array2::from_shape_fn((instance.n(), 2), |(i, j)| instance.coords[i][j]),
        ProblemKind::Cvrp => Array2::from_shape_fn((instance.n(), 3), |(i, j)| {
            if j < 2 {
                instance.coords[i][j]
            } else {
                instance.demands[i] as f64 / instance.capacity as f64
            }
        }),
    }
}

fn embed(params: &PolicyParams, features: &Array2<f64>) -> Array2<f64> {
    let mut h = params.embed.forward(features);
    if let Some(depot) = &params.embed_depot {
        let row = depot.forward(&features.slice(s![0..1, 0..2]).to_owned());
        h.row_mut(0).assign(&row.row(0));
    }
    h
}

fn layer_forward(l: &EncoderLayer, heads: usize, input: Array2<f64>) -> (Array2<f64>, LayerCache) {
    let (n, d) = input.dim();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let q = input.dot(&l.wq);
    let k = input.dot(&l.wk);
    let v = input.dot(&l.wv);
    let mut concat = Array2::zeros((n, d));
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut a);
        concat.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        attn.push(a);
    }
    let mixed = &input + &l.wo.forward(&concat);
    let (h1, ln1) = l.norm1.forward(&mixed);
    let pre_ff = l.ff1.forward(&h1);
    let act_ff = pre_ff.mapv(|x| x.max(0.0));
    let x2 = &h1 + &l.ff2.forward(&act_ff);
    let (out, ln2) = l.norm2.forward(&x2);
    (out, LayerCache { input, q, k, v, attn, concat, ln1, h1, pre_ff, act_ff, ln2 })
}

fn layer_backward(
    l: &EncoderLayer,
    heads: usize,
    c: &LayerCache,
    dout: &Array2<f64>,
    g: &mut EncoderLayer,
) -> Array2<f64> {
    let d = c.input.ncols();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();

    let dx2 = l.norm2.backward(&c.ln2, dout, &mut g.norm2);
    let dact = l.ff2.backward(&c.act_ff, &dx2, &mut g.ff2);
    let mut dpre = dact;
    ndarray::Zip::from(&mut dpre).and(&c.pre_ff).for_each(|dp, &p| {
        if p <= 0.0 {
            *dp = 0.0;
        }
    });
    let dh1 = dx2 + l.ff1.backward(&c.h1, &dpre, &mut g.ff1);

    let dmixed = l.norm1.backward(&c.ln1, &dh1, &mut g.norm1);
    let dconcat = l.wo.backward(&c.concat, &dmixed, &mut g.wo);
    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk_ = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let a = &c.attn[h];
        let doh = dconcat.slice(cols);
        let da = doh.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&a.t().dot(&doh));
        let ds = softmax_rows_backward(a, &da) * scale;
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk_.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    g.wq += &c.input.t().dot(&dq);
    g.wk += &c.input.t().dot(&dk_);
    g.wv += &c.input.t().dot(&dv);
    dmixed + dq.dot(&l.wq.t()) + dk_.dot(&l.wk.t()) + dv.dot(&l.wv.t())
}

pub fn encode_with_cache(instance: &Instance, params: &PolicyParams) -> EncoderCache {
    let features = node_features(instance);
    let mut h = embed(params, &features);
    let mut layers = Vec::with_capacity(params.layers.len());
    for l in &params.layers {
        let (out, cache) = layer_forward(l, params.config.heads, h);
        layers.push(cache);
        h = out;
    }
    EncoderCache { features, layers, output: h }
}

/// Node embeddings, `n x dim`.
pub fn encode(instance: &Instance, params: &PolicyParams) -> Array2<f64> {
    encode_with_cache(instance, params).output
}

/// Backpropagate `d_out = dL/d(embeddings)` into `grads`.
pub fn encode_backward(params: &PolicyParams, cache: &EncoderCache, d_out: Array2<f64>, grads: &mut PolicyParams) {
    let mut dh = d_out;
    for (i, c) in cache.layers.iter().enumerate().rev() {
        dh = layer_backward(&params.layers[i], params.config.heads, c, &dh, &mut grads.layers[i]);
    }
    match (&params.embed_depot, &mut grads.embed_depot) {
        (Some(_), Some(gd)) => {
            let f0 = cache.features.slice(s![0..1, 0..2]);
            let d0 = dh.slice(s![0..1, ..]);
            gd.w += &f0.t().dot(&d0);
            gd.b += &d0.sum_axis(Axis(0));
            let f = cache.features.slice(s![1.., ..]);
            let d = dh.slice(s![1.., ..]);
            grads.embed.w += &f.t().dot(&d);
            grads.embed.b += &d.sum_axis(Axis(0));
        }
        _ => {
            grads.embed.w += &cache.features.t().dot(&dh);
            grads.embed.b += &dh.sum_axis(Axis(0));
        }
    }
}

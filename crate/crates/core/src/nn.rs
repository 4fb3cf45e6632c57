//! Dense layers, layer norm and activations with explicit backward passes.
//!
//! Weight matrices are stored `in x out` so a batch of row vectors maps as
//! `y = x · W + b`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::rng::Stream;

/// Visits every parameter tensor in a fixed order.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        self.visit_mut(&mut |_, v| {
            v.copy_from_slice(&flat[pos..pos + v.len()]);
            pos += v.len();
        });
        assert_eq!(pos, flat.len(), "flat vector length does not match parameter count");
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |_, v| v.fill(value));
    }

    /// `self += alpha * other` for a structurally identical `other`.
    fn add_scaled(&mut self, alpha: f64, other: &Self)
    where
        Self: Sized,
    {
        let flat = other.to_flat();
        let mut pos = 0;
        self.visit_mut(&mut |_, v| {
            for (x, y) in v.iter_mut().zip(&flat[pos..]) {
                *x += alpha * y;
            }
            pos += v.len();
        });
    }

    fn scale(&mut self, alpha: f64) {
        self.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x *= alpha));
    }

    fn sq_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(&mut |_, _, v| s += v.iter().map(|x| x * x).sum::<f64>());
        s
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }

    /// `(name, shape)` of every tensor.
    fn shape_table(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, shape, _| out.push((name.to_string(), shape.to_vec())));
        out
    }
}

pub fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut Stream) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

pub fn uniform_vector(len: usize, bound: f64, rng: &mut Stream) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| rng.gen_range(-bound..bound))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Fan-in scaled uniform init.
    pub fn new(input: usize, output: usize, rng: &mut Stream) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear { w: uniform_matrix(input, output, bound, rng), b: uniform_vector(output, bound, rng) }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear { w: Array2::zeros((input, output)), b: Array1::zeros(output) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&format!("{prefix}.w"), self.w.shape(), self.w.as_slice().unwrap());
        f(&format!("{prefix}.b"), self.b.shape(), self.b.as_slice().unwrap());
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.w"), self.w.as_slice_mut().unwrap());
        f(&format!("{prefix}.b"), self.b.as_slice_mut().unwrap());
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm { gain: Array1::ones(dim), bias: Array1::zeros(dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        LayerNorm { gain: Array1::zeros(dim), bias: Array1::zeros(dim) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / d;
        let centered = x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        let xhat = centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gain + &self.bias;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        let d = dy.ncols() as f64;
        grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.bias += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gain;
        let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
        let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
        let mut dx = dxhat - &mean_dxhat.view().insert_axis(Axis(1));
        dx = dx - &(&cache.xhat * &mean_dxhat_xhat.view().insert_axis(Axis(1)));
        dx * &cache.inv_std.view().insert_axis(Axis(1))
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&format!("{prefix}.gain"), self.gain.shape(), self.gain.as_slice().unwrap());
        f(&format!("{prefix}.bias"), self.bias.shape(), self.bias.as_slice().unwrap());
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&format!("{prefix}.gain"), self.gain.as_slice_mut().unwrap());
        f(&format!("{prefix}.bias"), self.bias.as_slice_mut().unwrap());
    }
}

/// Row-wise softmax in place.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Given `p = softmax(s)` row-wise and `dp`, returns `ds`.
pub fn softmax_rows_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let inner = (p * dp).sum_axis(Axis(1));
    p * &(dp - &inner.view().insert_axis(Axis(1)))
}

/// Log-sum-exp of a slice.
pub fn logsumexp(x: &[f64]) -> f64 {
    let max = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gelu_derivative() {
        for x in [-3.0, -0.7, 0.0, 0.2, 1.5, 4.0] {
            assert!((gelu_grad(x) - fd(gelu, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let mut r = rng::stream(1, &[]);
        let mut ln = LayerNorm::new(4);
        ln.gain = uniform_vector(4, 1.0, &mut r);
        ln.bias = uniform_vector(4, 1.0, &mut r);
        let x = uniform_matrix(3, 4, 1.0, &mut r);
        let w = uniform_matrix(3, 4, 1.0, &mut r);
        let loss = |x: &Array2<f64>| (&ln.forward(x).0 * &w).sum();
        let (_, cache) = ln.forward(&x);
        let mut g = LayerNorm::zeros(4);
        let dx = ln.backward(&cache, &w, &mut g);
        for i in 0..3 {
            for j in 0..4 {
                let mut xp = x.clone();
                xp[[i, j]] += 1e-6;
                let mut xm = x.clone();
                xm[[i, j]] -= 1e-6;
                let num = (loss(&xp) - loss(&xm)) / 2e-6;
                assert!((num - dx[[i, j]]).abs() < 1e-7, "{num} vs {}", dx[[i, j]]);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = array![[1.0, 2.0, 3.0], [0.0, -1e9, 0.0]];
        softmax_rows(&mut x);
        assert!((x.row(0).sum() - 1.0).abs() < 1e-15);
        assert_eq!(x[[1, 1]], 0.0);
        assert!((x[[1, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_is_stable() {
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}

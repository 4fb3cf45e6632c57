//! Summary statistics and the paired one-sided t-test.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1); 0 for fewer than two values.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Population standard deviation.
pub fn pop_std(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for the alternative `mean(x - y) < 0`.
    pub p_less: f64,
}

/// Paired t-test of `x` against `y`.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> PairedTest {
    assert_eq!(x.len(), y.len(), "paired samples must have equal length");
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let n = d.len();
    let m = mean(&d);
    let s = std_dev(&d);
    if n < 2 || s == 0.0 {
        let p = if m < 0.0 { 0.0 } else if m > 0.0 { 1.0 } else { 0.5 };
        return PairedTest { n, mean_diff: m, t: if m == 0.0 { 0.0 } else { m.signum() * f64::INFINITY }, p_less: p };
    }
    let t = m / (s / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom");
    PairedTest { n, mean_diff: m, t, p_less: dist.cdf(t) }
}

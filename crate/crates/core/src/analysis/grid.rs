use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::memory::{MemoryNet, FULL_FEATURES};

/// Remaining-budget values of the exported stages: early, middle, late.
pub const BUDGET_STAGES: [f64; 3] = [0.9, 0.5, 0.1];

/// Anything that scores a full seven-column feature row.
pub trait EntryScorer {
    fn score(&self, full: &[f64; FULL_FEATURES]) -> f64;
}

impl EntryScorer for MemoryNet {
    fn score(&self, full: &[f64; FULL_FEATURES]) -> f64 {
        let row: Vec<f64> = self.features.columns().iter().map(|&c| full[c]).collect();
        self.forward(&row)
    }
}

/// `ret * (1 - exp(logp))`: the logit increment that reproduces the
/// REINFORCE gradient on the taken action.
pub struct AnalyticSurrogate;

impl EntryScorer for AnalyticSurrogate {
    fn score(&self, full: &[f64; FULL_FEATURES]) -> f64 {
        full[1] * (1.0 - full[0].exp())
    }
}

/// Any function of the feature row is a scorer.
impl<F: Fn(&[f64; FULL_FEATURES]) -> f64> EntryScorer for F {
    fn score(&self, full: &[f64; FULL_FEATURES]) -> f64 {
        self(full)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axes {
    pub ret_min: f64,
    pub ret_max: f64,
    pub logp_min: f64,
    pub logp_max: f64,
    pub resolution: usize,
}

impl Default for Axes {
    fn default() -> Self {
        Axes { ret_min: -3.0, ret_max: 3.0, logp_min: -6.0, logp_max: 0.0, resolution: 61 }
    }
}

impl Axes {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ret_min < self.ret_max
            && self.logp_min < self.logp_max
            && self.resolution >= 2
            && [self.ret_min, self.ret_max, self.logp_min, self.logp_max].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::validation("rule-grid axes must have min < max and at least two points"))
        }
    }

    fn points(lo: f64, hi: f64, k: usize) -> Vec<f64> {
        (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
    }

    pub fn returns(&self) -> Vec<f64> {
        Self::points(self.ret_min, self.ret_max, self.resolution)
    }

    pub fn logps(&self) -> Vec<f64> {
        Self::points(self.logp_min, self.logp_max, self.resolution)
    }
}

/// Values of the features not on the grid axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedFeatures {
    pub budget_at_write: f64,
    pub memory_logit: f64,
    /// Steps per trajectory; the trajectory log-probability is taken as
    /// `logp * horizon / 4`.
    pub horizon: usize,
}

impl FixedFeatures {
    pub fn new(horizon: usize) -> Self {
        FixedFeatures { budget_at_write: 0.5, memory_logit: 0.0, horizon }
    }

    pub fn row(&self, ret: f64, logp: f64, remaining: f64) -> [f64; FULL_FEATURES] {
        [logp, ret, self.budget_at_write, self.memory_logit, logp * self.horizon as f64 / 4.0, logp, remaining]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleGrid {
    pub remaining_budget: f64,
    pub returns: Vec<f64>,
    pub logps: Vec<f64>,
    /// `values[[i, j]]` at `returns[i]`, `logps[j]`.
    pub values: Array2<f64>,
    pub fixed: FixedFeatures,
}

pub fn rule_grid(scorer: &dyn EntryScorer, axes: &Axes, fixed: &FixedFeatures, remaining: f64) -> Result<RuleGrid> {
    axes.validate()?;
    let returns = axes.returns();
    let logps = axes.logps();
    let values = Array2::from_shape_fn((returns.len(), logps.len()), |(i, j)| scorer.score(&fixed.row(returns[i], logps[j], remaining)));
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("rule grid contains non-finite values".into()));
    }
    Ok(RuleGrid { remaining_budget: remaining, returns, logps, values, fixed: *fixed })
}

/// Long-format CSV (`ret,logp,correction`) with the fixed features in
/// leading comment lines.
pub fn write_rule_grid_csv(path: &Path, grid: &RuleGrid) -> Result<()> {
    let f = &grid.fixed;
    let mut out = format!(
        "# remaining_budget={}\n# budget_at_write={}\n# memory_logit_at_write={}\n# traj_logp=logp*{}/4\n# tail_logp=logp\nret,logp,correction\n",
        grid.remaining_budget, f.budget_at_write, f.memory_logit, f.horizon
    );
    for (i, r) in grid.returns.iter().enumerate() {
        for (j, l) in grid.logps.iter().enumerate() {
            out.push_str(&format!("{r:.6},{l:.6},{:.12e}\n", grid.values[[i, j]]));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One grid per remaining-budget value, written as
/// `rule_grid_remaining_<value>.csv` in `dir`.
pub fn export_rule_grid(
    scorer: &dyn EntryScorer,
    axes: &Axes,
    fixed: &FixedFeatures,
    budgets: &[f64],
    dir: &Path,
) -> Result<Vec<(RuleGrid, PathBuf)>> {
    std::fs::create_dir_all(dir)?;
    budgets
        .iter()
        .map(|&b| {
            let g = rule_grid(scorer, axes, fixed, b)?;
            let p = dir.join(format!("rule_grid_remaining_{b:.2}.csv"));
            write_rule_grid_csv(&p, &g)?;
            Ok((g, p))
        })
        .collect()
}

/// Mean correction over (ret >= 1, logp <= -4) minus the mean over
/// (ret <= -1, logp >= -2).
pub fn quadrant_contrast(grid: &RuleGrid) -> Result<(f64, f64)> {
    let mean_where = |pred: &dyn Fn(f64, f64) -> bool| {
        let mut s = 0.0;
        let mut k = 0;
        for (i, &r) in grid.returns.iter().enumerate() {
            for (j, &l) in grid.logps.iter().enumerate() {
                if pred(r, l) {
                    s += grid.values[[i, j]];
                    k += 1;
                }
            }
        }
        if k == 0 {
            None
        } else {
            Some(s / k as f64)
        }
    };
    let hi = mean_where(&|r, l| r >= 1.0 && l <= -4.0);
    let lo = mean_where(&|r, l| r <= -1.0 && l >= -2.0);
    match (hi, lo) {
        (Some(h), Some(l)) => Ok((h, l)),
        _ => Err(Error::validation("grid axes do not cover both comparison quadrants")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_scorer_gives_constant_grid() {
        let c = |_: &[f64; FULL_FEATURES]| 0.75;
        let g = rule_grid(&c, &Axes::default(), &FixedFeatures::new(19), 0.5).unwrap();
        assert_eq!(g.values.dim(), (61, 61));
        assert!(g.values.iter().all(|&v| v == 0.75));
    }

    #[test]
    fn surrogate_matches_closed_form() {
        let g = rule_grid(&AnalyticSurrogate, &Axes::default(), &FixedFeatures::new(19), 0.1).unwrap();
        for (i, r) in g.returns.iter().enumerate() {
            for (j, l) in g.logps.iter().enumerate() {
                assert!((g.values[[i, j]] - r * (1.0 - l.exp())).abs() < 1e-12);
            }
        }
        let (hi, lo) = quadrant_contrast(&g).unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn degenerate_axes_rejected() {
        let a = Axes { ret_min: 1.0, ret_max: 1.0, ..Axes::default() };
        assert!(rule_grid(&AnalyticSurrogate, &a, &FixedFeatures::new(19), 0.5).is_err());
    }

    #[test]
    fn export_is_pure() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let net = MemoryNet::init(crate::memory::FeatureSet::D, 3);
        let a = export_rule_grid(&net, &Axes::default(), &FixedFeatures::new(19), &BUDGET_STAGES, d1.path()).unwrap();
        let b = export_rule_grid(&net, &Axes::default(), &FixedFeatures::new(19), &BUDGET_STAGES, d2.path()).unwrap();
        assert_eq!(a.len(), 3);
        for ((_, p), (_, q)) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(p).unwrap(), std::fs::read(q).unwrap());
        }
    }
}

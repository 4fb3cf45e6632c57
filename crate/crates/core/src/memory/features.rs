use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::MemoryEntry;
use crate::error::{Error, Result};

/// Number of columns in the full feature row.
pub const FULL_FEATURES: usize = 7;

/// Column indices into the full row
/// `(action_logp, ret, budget_at_write, memory_logit, traj_logp, tail_logp, remaining_budget)`.
const LOGP: usize = 0;
const RET: usize = 1;
const BUDGET_AT_WRITE: usize = 2;
const REMAINING: usize = 6;

/// Nested feature subsets used by the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSet {
    /// Return and action log-probability.
    A,
    /// A plus remaining budget.
    B,
    /// B plus budget at write time.
    C,
    /// Everything.
    D,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 4] = [FeatureSet::A, FeatureSet::B, FeatureSet::C, FeatureSet::D];

    pub fn columns(self) -> &'static [usize] {
        match self {
            FeatureSet::A => &[LOGP, RET],
            FeatureSet::B => &[LOGP, RET, REMAINING],
            FeatureSet::C => &[LOGP, RET, BUDGET_AT_WRITE, REMAINING],
            FeatureSet::D => &[0, 1, 2, 3, 4, 5, 6],
        }
    }

    pub fn dim(self) -> usize {
        self.columns().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::A => "A",
            FeatureSet::B => "B",
            FeatureSet::C => "C",
            FeatureSet::D => "D",
        }
    }

    /// Position of a full-row column inside this subset, if present.
    pub fn position(self, full_column: usize) -> Option<usize> {
        self.columns().iter().position(|&c| c == full_column)
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(FeatureSet::A),
            "B" => Ok(FeatureSet::B),
            "C" => Ok(FeatureSet::C),
            "D" | "FULL" => Ok(FeatureSet::D),
            other => Err(Error::validation(format!("unknown feature subset `{other}` (expected A, B, C or D)"))),
        }
    }
}

/// Append one feature row per entry to `out` (row-major).
///
/// Returns are z-scored over the retrieved set (zero variance maps to 0);
/// the other features are used as stored.
pub fn features_into<'a>(
    entries: impl Iterator<Item = &'a MemoryEntry> + Clone,
    remaining_budget: f64,
    set: FeatureSet,
    out: &mut Vec<f64>,
) {
    let (mut k, mut sum) = (0usize, 0.0);
    for e in entries.clone() {
        k += 1;
        sum += e.ret;
    }
    if k == 0 {
        return;
    }
    let mean = sum / k as f64;
    let var = entries.clone().map(|e| (e.ret - mean).powi(2)).sum::<f64>() / k as f64;
    let std = var.sqrt();
    for e in entries {
        let z = if std > 1e-12 { (e.ret - mean) / std } else { 0.0 };
        let full = [
            e.action_logp,
            z,
            e.budget_at_write,
            e.memory_logit_at_write,
            e.traj_logp,
            e.tail_logp,
            remaining_budget,
        ];
        out.extend(set.columns().iter().map(|&c| full[c]));
    }
}

/// Actions and the `k x dim` feature matrix for a retrieved set.
pub fn build_features(entries: &[MemoryEntry], remaining_budget: f64, set: FeatureSet) -> Result<(Vec<usize>, Array2<f64>)> {
    if entries.is_empty() {
        return Err(Error::contract("build_features needs at least one entry"));
    }
    let mut rows = Vec::with_capacity(entries.len() * set.dim());
    features_into(entries.iter(), remaining_budget, set, &mut rows);
    let actions = entries.iter().map(|e| e.action).collect();
    Ok((actions, Array2::from_shape_vec((entries.len(), set.dim()), rows).unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(ret: f64) -> MemoryEntry {
        MemoryEntry {
            action: 1,
            action_logp: -0.7,
            ret,
            budget_at_write: 0.2,
            memory_logit_at_write: 0.01,
            traj_logp: -5.0,
            tail_logp: -2.0,
        }
    }

    #[test]
    fn single_entry_return_is_zero() {
        let (_, f) = build_features(&[e(-4.0)], 0.5, FeatureSet::D).unwrap();
        assert_eq!(f[[0, 1]], 0.0);
    }

    #[test]
    fn two_point_zscore() {
        let (_, f) = build_features(&[e(-5.0), e(-3.0)], 0.5, FeatureSet::D).unwrap();
        assert!((f[[0, 1]] + 1.0).abs() < 1e-15);
        assert!((f[[1, 1]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn remaining_budget_broadcast_in_last_column() {
        let (_, f) = build_features(&[e(-5.0), e(-3.0), e(-1.0)], 0.25, FeatureSet::D).unwrap();
        assert!(f.column(6).iter().all(|&v| v == 0.25));
        assert_eq!(f.row(0).to_vec()[..1], [-0.7]);
        assert_eq!(f.row(0).to_vec()[2..6], [0.2, 0.01, -5.0, -2.0]);
    }

    #[test]
    fn empty_is_a_contract_error() {
        assert!(build_features(&[], 0.5, FeatureSet::D).is_err());
    }

    #[test]
    fn subsets_are_nested() {
        let mut prev: Vec<usize> = Vec::new();
        for s in FeatureSet::ALL {
            let cols = s.columns().to_vec();
            assert!(prev.iter().all(|c| cols.contains(c)));
            assert!(cols.len() > prev.len());
            prev = cols;
        }
        assert_eq!(FeatureSet::D.dim(), FULL_FEATURES);
    }
}

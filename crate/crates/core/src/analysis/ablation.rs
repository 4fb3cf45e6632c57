use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::instances::Dataset;
use crate::memory::{FeatureSet, MemoryNet};
use crate::policy::PolicyParams;
use crate::search::{evaluate, BudgetSpec, Strategy};
use crate::stats::mean;
use crate::training::{train, TrainConfig, TrainLogRow};

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub subset: &'static str,
    pub attempt: usize,
    pub mean_best_so_far: f64,
    pub mean_latest_cost: f64,
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub subset: FeatureSet,
    /// Per-instance final best cost, dataset order.
    pub best_costs: Vec<f64>,
    pub curve: Vec<AblationRow>,
    pub log: Vec<TrainLogRow>,
    pub net: MemoryNet,
}

impl AblationResult {
    pub fn final_mean_best(&self) -> f64 {
        mean(&self.best_costs)
    }
}

/// Train one memory net per feature subset from the same base policy and
/// evaluate each with memory-guided search.
///
/// The base policy is frozen during ablation training so subsets differ only
/// in their memory features.
pub fn run_ablation(
    subsets: &[FeatureSet],
    train_cfg: &TrainConfig,
    params: &PolicyParams,
    dataset: &Dataset,
    budget: &BudgetSpec,
    seed: u64,
) -> Result<Vec<AblationResult>> {
    let mut out = Vec::with_capacity(subsets.len());
    for &subset in subsets {
        let mut cfg = train_cfg.clone();
        cfg.features = subset;
        cfg.lrs.encoder = 0.0;
        cfg.lrs.decoder = 0.0;
        let net = MemoryNet::init(subset, cfg.seed);
        let trained = train(&cfg, params.clone(), net, &mut |_, _, _| Ok(()))?;
        let strategy = Strategy::Memento { net: trained.net.clone(), memory: cfg.memory };
        let report = evaluate(dataset, params, &strategy, budget, seed, None, false)?;
        let curve = (0..budget.attempts)
            .map(|i| AblationRow {
                subset: subset.name(),
                attempt: i,
                mean_best_so_far: mean(&report.traces.iter().map(|t| t.best_so_far[i]).collect::<Vec<_>>()),
                mean_latest_cost: mean(&report.traces.iter().map(|t| t.mean_cost[i]).collect::<Vec<_>>()),
            })
            .collect();
        out.push(AblationResult { subset, best_costs: report.best_costs(), curve, log: trained.log, net: trained.net });
    }
    Ok(out)
}

/// `ablation_curves.csv` (per-attempt means) and `ablation_summary.csv`.
pub fn write_ablation_csvs(dir: &Path, results: &[AblationResult]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut curves = String::from("subset,attempt,mean_best_so_far,mean_latest_cost\n");
    for r in results {
        for row in &r.curve {
            curves.push_str(&format!("{},{},{:.9},{:.9}\n", row.subset, row.attempt, row.mean_best_so_far, row.mean_latest_cost));
        }
    }
    std::fs::write(dir.join("ablation_curves.csv"), curves)?;
    let mut summary = String::from("subset,features,final_mean_best,final_mean_latest\n");
    for r in results {
        let latest = r.curve.last().map_or(f64::NAN, |c| c.mean_latest_cost);
        summary.push_str(&format!("{},{},{:.9},{:.9}\n", r.subset.name(), r.subset.dim(), r.final_mean_best(), latest));
    }
    std::fs::write(dir.join("ablation_summary.csv"), summary)?;
    Ok(())
}

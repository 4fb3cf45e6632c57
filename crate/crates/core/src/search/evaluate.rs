use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::{BudgetSpec, SearchTrace, Strategy};
use crate::error::{Error, Result};
use crate::instances::Dataset;
use crate::par;
use crate::policy::PolicyParams;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub instance_id: u64,
    pub strategy: String,
    pub budget: usize,
    pub best_cost: f64,
    /// Mean cost of the final attempt.
    pub final_mean_cost: f64,
    /// Percent gap to the reference, when one was supplied.
    pub gap: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub traces: Vec<SearchTrace>,
}

impl EvalReport {
    pub fn best_costs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.best_cost).collect()
    }

    pub fn mean_best_cost(&self) -> f64 {
        crate::stats::mean(&self.best_costs())
    }

    pub fn mean_gap(&self) -> Option<f64> {
        let gaps: Option<Vec<f64>> = self.rows.iter().map(|r| r.gap).collect();
        gaps.map(|g| crate::stats::mean(&g))
    }
}

/// Run `strategy` on every instance. Instances run in parallel; results are
/// in dataset order. With `timing` off, `wall_ms` is written as 0 so outputs
/// are byte-reproducible.
pub fn evaluate(
    dataset: &Dataset,
    params: &PolicyParams,
    strategy: &Strategy,
    budget: &BudgetSpec,
    seed: u64,
    references: Option<&[f64]>,
    timing: bool,
) -> Result<EvalReport> {
    if params.config.kind != dataset.kind {
        return Err(Error::validation(format!(
            "checkpoint is for {} but the dataset is {}",
            params.config.kind, dataset.kind
        )));
    }
    if let Some(r) = references {
        if r.len() != dataset.len() {
            return Err(Error::validation(format!(
                "reference file has {} costs for {} instances",
                r.len(),
                dataset.len()
            )));
        }
    }
    let results: Vec<Result<(EvalRow, SearchTrace)>> = par::map_slice(&dataset.instances, |inst| {
        let start = Instant::now();
        let trace = strategy.run(inst, params, budget, seed)?;
        trace.check(inst, budget)?;
        let wall_ms = if timing { start.elapsed().as_millis() as u64 } else { 0 };
        Ok((
            EvalRow {
                instance_id: inst.id,
                strategy: strategy.name().to_string(),
                budget: budget.attempts,
                best_cost: trace.best_cost,
                final_mean_cost: *trace.mean_cost.last().unwrap(),
                gap: None,
                wall_ms,
            },
            trace,
        ))
    });
    let mut rows = Vec::with_capacity(dataset.len());
    let mut traces = Vec::with_capacity(dataset.len());
    for (k, r) in results.into_iter().enumerate() {
        let (mut row, trace) = r?;
        if let Some(refs) = references {
            row.gap = Some(gap_percent(row.best_cost, refs[k]));
        }
        rows.push(row);
        traces.push(trace);
    }
    Ok(EvalReport { rows, traces })
}

/// `100 * (cost - reference) / reference`.
pub fn gap_percent(cost: f64, reference: f64) -> f64 {
    100.0 * (cost - reference) / reference
}

/// `instance_id,strategy,budget,best_cost,gap,wall_ms`; an empty gap means no
/// reference was given.
pub fn write_metrics_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut out = String::from("instance_id,strategy,budget,best_cost,gap,wall_ms\n");
    for r in rows {
        let gap = r.gap.map(|g| format!("{g:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{:.9},{},{}\n",
            r.instance_id, r.strategy, r.budget, r.best_cost, gap, r.wall_ms
        ));
    }
    std::fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// Per-attempt curves: `instance_id,strategy,attempt,best_so_far,mean_cost,std_cost`.
pub fn write_traces_csv(path: &Path, strategy: &str, rows: &[EvalRow], traces: &[SearchTrace]) -> Result<()> {
    let mut out = String::from("instance_id,strategy,attempt,best_so_far,mean_cost,std_cost\n");
    for (r, t) in rows.iter().zip(traces) {
        for i in 0..t.best_so_far.len() {
            out.push_str(&format!(
                "{},{},{},{:.9},{:.9},{:.9}\n",
                r.instance_id, strategy, i, t.best_so_far[i], t.mean_cost[i], t.std_cost[i]
            ));
        }
    }
    std::fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

//! Named end-to-end pipelines with pinned seeds.
//!
//! Each experiment writes into `<root>/<name>/` and reuses the checkpoints of
//! the experiments it depends on when they already exist.

use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::analysis::{export_rule_grid, run_ablation, write_ablation_csvs, Axes, FixedFeatures, BUDGET_STAGES};
use crate::checkpoint::{Checkpoint, Provenance};
use crate::config::Config;
use crate::env::horizon;
use crate::error::{Error, Result};
use crate::instances::{generate_dataset, oracle, read_references, write_references, Dataset, ProblemKind};
use crate::memory::{FeatureSet, MemoryNet};
use crate::par;
use crate::policy::{PolicyParams, Temperature};
use crate::search::{evaluate, write_metrics_csv, write_traces_csv, BudgetSpec, EvalReport, Strategy};
use crate::stats::{mean, paired_t_test};
use crate::training::{pretrain, train, write_log_csv};

pub const EXPERIMENTS: [&str; 6] =
    ["pretrain-tsp20", "train-memento-tsp20", "eval-benchmark-tsp20", "ablation", "rule-grid", "cvrp-suite"];

/// `Full` is the documented protocol; `Smoke` shrinks every size so the
/// whole pipeline runs in seconds (used for determinism checks).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Full,
    Smoke,
}

const BASE_CKPT: &str = "base.ckpt";
const MEMENTO_CKPT: &str = "memento.ckpt";

/// Pinned configuration of an experiment family.
pub fn experiment_config(kind: ProblemKind, scale: Scale) -> Config {
    let mut c = Config::default();
    c.kind = Some(kind);
    c.seed = 2024;
    c.data_seed = 77;
    c.n = match kind {
        ProblemKind::Tsp => 20,
        ProblemKind::Cvrp => 21,
    };
    c.pretrain_steps = 1500;
    c.pretrain_batch = 32;
    c.pretrain_starts = 20;
    c.pretrain_lr = 1e-3;
    // The base policy stays frozen: gains over sampling come from the memory
    // alone, and sampling from the trained checkpoint is sampling from the base.
    c.train.lr_encoder = 0.0;
    c.train.lr_decoder = 0.0;
    c.train.lr_memory = 0.004;
    c.train.steps = 100;
    c.train.budget = 50;
    c.train.batch = 16;
    c.train.accumulation = 1;
    c.train.starts = 20;
    c.data_count = 100;
    c.search_budget = 200;
    c.search_starts = 20;
    c.search_temperature = Temperature::Softmax(1.0);
    if scale == Scale::Smoke {
        c.n = match kind {
            ProblemKind::Tsp => 10,
            ProblemKind::Cvrp => 9,
        };
        c.dim = 16;
        c.heads = 2;
        c.ff = 32;
        c.pretrain_steps = 3;
        c.pretrain_batch = 4;
        c.pretrain_starts = 5;
        c.train.steps = 2;
        c.train.budget = 4;
        c.train.batch = 3;
        c.train.starts = 5;
        c.data_count = 4;
        c.search_budget = 5;
        c.search_starts = 5;
    }
    c
}

fn family(name: &str) -> Result<ProblemKind> {
    match name {
        "cvrp-suite" => Ok(ProblemKind::Cvrp),
        n if EXPERIMENTS.contains(&n) => Ok(ProblemKind::Tsp),
        other => Err(Error::validation(format!(
            "unknown experiment `{other}`; expected one of {}",
            EXPERIMENTS.join(", ")
        ))),
    }
}

/// Run experiment `name` under `root`. Returns the metrics files written.
pub fn reproduce<S: AsRef<str>>(name: &str, root: &Path, scale: Scale, overrides: &[S]) -> Result<Vec<PathBuf>> {
    let kind = family(name)?;
    let mut cfg = experiment_config(kind, scale);
    cfg.apply_overrides(overrides)?;
    let threads = cfg.threads.max(1);
    par::with_threads(threads, || match name {
        "pretrain-tsp20" => stage_pretrain(&cfg, &root.join(name)).map(|(_, f)| f),
        "train-memento-tsp20" => stage_train(&cfg, root, &root.join("pretrain-tsp20"), &root.join(name)).map(|(_, f)| f),
        "eval-benchmark-tsp20" => {
            let (trained, _) = stage_train(&cfg, root, &root.join("pretrain-tsp20"), &root.join("train-memento-tsp20"))?;
            let base = root.join("pretrain-tsp20").join(BASE_CKPT);
            stage_benchmark(&cfg, &base, &trained, &root.join(name))
        }
        "ablation" => {
            let (base, _) = stage_pretrain(&cfg, &root.join("pretrain-tsp20"))?;
            stage_ablation(&cfg, &base, &root.join(name))
        }
        "rule-grid" => {
            let (trained, _) = stage_train(&cfg, root, &root.join("pretrain-tsp20"), &root.join("train-memento-tsp20"))?;
            stage_rule_grid(&cfg, &trained, &root.join(name))
        }
        "cvrp-suite" => {
            let dir = root.join(name);
            let (trained, _) = stage_train(&cfg, root, &dir.join("pretrain"), &dir.join("train"))?;
            stage_benchmark(&cfg, &dir.join("pretrain").join(BASE_CKPT), &trained, &dir.join("eval"))
        }
        _ => unreachable!(),
    })
}

fn provenance(cfg: &Config, command: &str) -> Provenance {
    Provenance::new(&cfg.snapshot(), cfg.seed, command)
}

/// Reuse `dir/file` when it was produced from the same configuration.
fn cached(dir: &Path, file: &str, cfg: &Config, command: &str) -> Option<Checkpoint> {
    let ck = Checkpoint::load(&dir.join(file)).ok()?;
    (ck.provenance == provenance(cfg, command)).then_some(ck)
}

/// Configuration that determines the pretraining result.
fn pretrain_key(cfg: &Config) -> Config {
    let mut k = Config::default();
    for key in ["seed", "problem.kind", "problem.n", "policy.dim", "policy.layers", "policy.heads", "policy.ff", "policy.clip"] {
        k.set(key, &cfg.get(key).unwrap()).unwrap();
    }
    for key in ["pretrain.batch", "pretrain.starts", "pretrain.steps", "pretrain.lr"] {
        k.set(key, &cfg.get(key).unwrap()).unwrap();
    }
    k
}

/// Configuration that determines the memento training result.
fn train_key(cfg: &Config) -> Config {
    let mut k = pretrain_key(cfg);
    for key in crate::config::KEYS.iter().filter(|k| k.starts_with("train.")) {
        k.set(key, &cfg.get(key).unwrap()).unwrap();
    }
    k
}

fn stage_pretrain(cfg: &Config, dir: &Path) -> Result<(Checkpoint, Vec<PathBuf>)> {
    let key = pretrain_key(cfg);
    let log_path = dir.join("pretrain_log.csv");
    if let Some(ck) = cached(dir, BASE_CKPT, &key, "pretrain") {
        info!("reusing {}", dir.join(BASE_CKPT).display());
        return Ok((ck, vec![log_path]));
    }
    std::fs::create_dir_all(dir)?;
    cfg.write_snapshot(dir)?;
    let pc = cfg.pretrain_config()?;
    let mut rows = Vec::new();
    let params = pretrain(&pc, &mut |r| {
        if r.step % 50 == 0 {
            info!("pretrain step {}: mean cost {:.4}", r.step, r.mean_cost);
        }
        rows.push(r.clone());
    })?;
    write_log_csv(&log_path, &rows)?;
    let ck = Checkpoint::new(params, None, provenance(&key, "pretrain"));
    ck.save(&dir.join(BASE_CKPT))?;
    Ok((ck, vec![log_path]))
}

fn stage_train(cfg: &Config, _root: &Path, pre_dir: &Path, dir: &Path) -> Result<(Checkpoint, Vec<PathBuf>)> {
    let (base, _) = stage_pretrain(cfg, pre_dir)?;
    let key = train_key(cfg);
    let log_path = dir.join("train_log.csv");
    if let Some(ck) = cached(dir, MEMENTO_CKPT, &key, "train") {
        info!("reusing {}", dir.join(MEMENTO_CKPT).display());
        return Ok((ck, vec![log_path]));
    }
    std::fs::create_dir_all(dir)?;
    cfg.write_snapshot(dir)?;
    let tc = cfg.train_config()?;
    let net = MemoryNet::init(tc.features, cfg.seed);
    let prov = provenance(&key, "train");
    let out = train(&tc, base.params.clone(), net, &mut |step, p, n| {
        let mut ck = Checkpoint::new(p.clone(), Some(n.clone()), prov.clone());
        ck.provenance.command = format!("train@{step}");
        ck.save(&dir.join("memento.partial.ckpt"))
    })?;
    let _ = std::fs::remove_file(dir.join("memento.partial.ckpt"));
    write_log_csv(&log_path, &out.log)?;
    let mut ck = Checkpoint::new(out.params, Some(out.net), prov);
    ck.optim = Some(out.optim);
    ck.save(&dir.join(MEMENTO_CKPT))?;
    Ok((ck, vec![log_path]))
}

/// Held-out dataset and reference costs, cached in `dir`.
pub fn held_out(cfg: &Config, dir: &Path) -> Result<(Dataset, Vec<f64>)> {
    let kind = cfg.kind()?;
    std::fs::create_dir_all(dir)?;
    let ds_path = dir.join("dataset.dset");
    let ref_path = dir.join("references.csv");
    let ds = generate_dataset(kind, cfg.n, cfg.data_count, cfg.data_seed)?;
    if let (Ok(stored), Ok(refs)) = (Dataset::load(&ds_path), read_references(&ref_path)) {
        let ids: Vec<u64> = ds.instances.iter().map(|i| i.id).collect();
        if stored == ds && refs.iter().map(|r| r.0).collect::<Vec<_>>() == ids {
            return Ok((ds, refs.into_iter().map(|r| r.1).collect()));
        }
    }
    let refs: Vec<Result<f64>> = par::map_slice(&ds.instances, |inst| oracle::reference_cost(inst, cfg.seed).map(|o| o.cost));
    let refs: Vec<f64> = refs.into_iter().collect::<Result<_>>()?;
    ds.save(&ds_path)?;
    let ids: Vec<u64> = ds.instances.iter().map(|i| i.id).collect();
    write_references(&ref_path, &ids, &refs)?;
    // Read back so fresh and cached runs use identical (rounded) values.
    let refs = read_references(&ref_path)?.into_iter().map(|r| r.1).collect();
    Ok((ds, refs))
}

#[derive(Serialize)]
struct SummaryRow {
    strategy: String,
    policy: &'static str,
    attempts: usize,
    starts: usize,
    mean_best_cost: f64,
    mean_gap_pct: f64,
    p_less_vs_sampling: f64,
    wins_vs_sampling: usize,
}

fn stage_benchmark(cfg: &Config, base_path: &Path, trained: &Checkpoint, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    cfg.write_snapshot(dir)?;
    let base = Checkpoint::load(base_path)?;
    let (ds, refs) = held_out(cfg, dir)?;
    let budget = cfg.budget()?;
    let greedy_budget = BudgetSpec::new(1, budget.starts, Temperature::Greedy);
    let net = trained.net.clone().ok_or_else(|| Error::validation("trained checkpoint has no memory net"))?;
    let tuned = &trained.params;
    let runs: Vec<(&str, &str, &PolicyParams, Strategy, BudgetSpec)> = vec![
        ("greedy", "tuned", tuned, Strategy::Greedy, greedy_budget),
        ("sampling-base", "base", &base.params, Strategy::Sampling, budget),
        ("sampling", "tuned", tuned, Strategy::Sampling, budget),
        ("eas-analog", "tuned", tuned, Strategy::Eas(cfg.eas), budget),
        ("memento", "tuned", tuned, Strategy::Memento { net, memory: cfg.memory() }, budget),
    ];
    let mut files = Vec::new();
    let mut reports: Vec<(String, &str, BudgetSpec, EvalReport)> = Vec::new();
    for (label, which, params, strategy, b) in runs {
        info!("evaluating {label} on {} instances", ds.len());
        let mut rep = evaluate(&ds, params, &strategy, &b, cfg.seed, Some(&refs), cfg.timing)?;
        for r in rep.rows.iter_mut() {
            r.strategy = label.to_string();
        }
        let m = dir.join(format!("metrics_{label}.csv"));
        write_metrics_csv(&m, &rep.rows)?;
        let t = dir.join(format!("traces_{label}.csv"));
        write_traces_csv(&t, label, &rep.rows, &rep.traces)?;
        files.push(m);
        files.push(t);
        reports.push((label.to_string(), which, b, rep));
    }
    let sampling = reports.iter().find(|r| r.0 == "sampling").unwrap().3.best_costs();
    let mut summary = String::from("strategy,policy,attempts,starts,mean_best_cost,mean_gap_pct,p_less_vs_sampling,wins_vs_sampling\n");
    for (label, which, b, rep) in &reports {
        let costs = rep.best_costs();
        let test = paired_t_test(&costs, &sampling);
        let wins = costs.iter().zip(&sampling).filter(|(a, s)| a <= s).count();
        let row = SummaryRow {
            strategy: label.clone(),
            policy: which,
            attempts: b.attempts,
            starts: b.starts,
            mean_best_cost: mean(&costs),
            mean_gap_pct: rep.mean_gap().unwrap(),
            p_less_vs_sampling: test.p_less,
            wins_vs_sampling: wins,
        };
        summary.push_str(&format!(
            "{},{},{},{},{:.9},{:.6},{:.6e},{}\n",
            row.strategy, row.policy, row.attempts, row.starts, row.mean_best_cost, row.mean_gap_pct, row.p_less_vs_sampling, row.wins_vs_sampling
        ));
    }
    let s = dir.join("summary.csv");
    std::fs::write(&s, summary)?;
    files.push(s);
    Ok(files)
}

fn stage_ablation(cfg: &Config, base: &Checkpoint, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut cfg = cfg.clone();
    // Ablation runs are a fraction of the main protocol.
    if cfg.data_count > 30 {
        cfg.data_count = 30;
        cfg.train.steps = cfg.train.steps.min(30);
        cfg.search_budget = cfg.search_budget.min(100);
    }
    cfg.write_snapshot(dir)?;
    let (ds, _) = held_out(&cfg, &dir.join("data"))?;
    let tc = cfg.train_config()?;
    let results = run_ablation(&FeatureSet::ALL, &tc, &base.params, &ds, &cfg.budget()?, cfg.seed)?;
    write_ablation_csvs(dir, &results)?;
    let mut per_instance = String::from("subset,instance_id,best_cost\n");
    for r in &results {
        for (inst, c) in ds.instances.iter().zip(&r.best_costs) {
            per_instance.push_str(&format!("{},{},{:.9}\n", r.subset.name(), inst.id, c));
        }
    }
    std::fs::write(dir.join("ablation_instances.csv"), per_instance)?;
    Ok(vec![dir.join("ablation_curves.csv"), dir.join("ablation_summary.csv"), dir.join("ablation_instances.csv")])
}

fn stage_rule_grid(cfg: &Config, trained: &Checkpoint, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    cfg.write_snapshot(dir)?;
    let net = trained.net.as_ref().ok_or_else(|| Error::validation("trained checkpoint has no memory net"))?;
    let probe = generate_dataset(cfg.kind()?, cfg.n, 1, 0)?;
    let fixed = FixedFeatures::new(horizon(&probe.instances[0]));
    let grids = export_rule_grid(net, &Axes::default(), &fixed, &BUDGET_STAGES, dir)?;
    Ok(grids.into_iter().map(|(_, p)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_experiment_rejected() {
        let d = tempfile::tempdir().unwrap();
        assert!(reproduce::<&str>("pretrain-tsp21", d.path(), Scale::Smoke, &[]).is_err());
    }

    #[test]
    fn smoke_rule_grid_writes_three_csvs() {
        let d = tempfile::tempdir().unwrap();
        let files = reproduce::<&str>("rule-grid", d.path(), Scale::Smoke, &[]).unwrap();
        assert_eq!(files.len(), 3);
        for f in files {
            let text = std::fs::read_to_string(f).unwrap();
            assert!(text.lines().any(|l| l == "ret,logp,correction"));
            assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 61 * 61);
        }
    }
}

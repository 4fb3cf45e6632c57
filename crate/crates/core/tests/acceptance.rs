//! Acceptance run: prints one PASS/FAIL line per criterion. The exit status
//! is non-zero on failure only with `ACCEPTANCE_STRICT=1`, so the report can
//! run as part of the normal test suite; the FAIL lines are what count.
//! `ACCEPTANCE_ONLY=1,5` restricts the run to the listed criteria.
//!
//! The adaptation, baseline-ordering and rule-grid criteria read the outputs
//! of the full experiment pipeline under `$MEMENTO_OUT` (default: `runs/` at
//! the workspace root). Missing or stale outputs are regenerated, which takes
//! a long time on a small machine.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::checks::*;
use common::*;
use memento::analysis::{export_rule_grid, quadrant_contrast, rule_grid, Axes, FixedFeatures, BUDGET_STAGES};
use memento::checkpoint::Checkpoint;
use memento::env::horizon;
use memento::experiments::{experiment_config, reproduce, Scale, EXPERIMENTS};
use memento::policy::Temperature;
use memento::search::{evaluate, BudgetSpec, EasConfig, MemoryConfig, Strategy};
use memento::training::{memento_loss_grad, EpisodeConfig};

type Verdict = Result<(bool, String), String>;

fn root() -> PathBuf {
    std::env::var_os("MEMENTO_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../runs"))
}

fn threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Resolved config without the keys that may differ between equivalent runs.
fn comparable(snapshot: &str) -> String {
    snapshot.lines().filter(|l| !l.starts_with("threads") && !l.starts_with("timing")).collect::<Vec<_>>().join("\n")
}

/// Run `name` at full scale unless `dir` already holds `file` produced from
/// the pinned configuration.
fn ensure(name: &str, kind: ProblemKind, dir: &Path, file: &str) -> Result<(), String> {
    let expected = comparable(&experiment_config(kind, Scale::Full).snapshot());
    let fresh = std::fs::read_to_string(dir.join("resolved_config.txt")).map(|s| comparable(&s) == expected).unwrap_or(false)
        && dir.join(file).exists();
    if !fresh {
        eprintln!("running `reproduce {name}` under {} (this takes a while)", root().display());
        reproduce(name, &root(), Scale::Full, &[format!("threads={}", threads())]).map_err(err)?;
    }
    Ok(())
}

/// `strategy -> column -> value` from a benchmark summary.
fn summary(path: &Path) -> Result<BTreeMap<String, BTreeMap<String, String>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty summary")?.split(',').collect();
    Ok(lines
        .map(|l| {
            let cells: BTreeMap<String, String> = header.iter().zip(l.split(',')).map(|(h, c)| (h.to_string(), c.to_string())).collect();
            (cells["strategy"].clone(), cells)
        })
        .collect())
}

fn num(table: &BTreeMap<String, BTreeMap<String, String>>, strategy: &str, col: &str) -> Result<f64, String> {
    table
        .get(strategy)
        .and_then(|r| r.get(col))
        .ok_or_else(|| format!("summary has no {strategy}/{col}"))?
        .parse()
        .map_err(err)
}

fn benchmark(kind: ProblemKind) -> Result<(PathBuf, BTreeMap<String, BTreeMap<String, String>>), String> {
    let (name, dir) = match kind {
        ProblemKind::Tsp => ("eval-benchmark-tsp20", root().join("eval-benchmark-tsp20")),
        ProblemKind::Cvrp => ("cvrp-suite", root().join("cvrp-suite").join("eval")),
    };
    ensure(name, kind, &dir, "summary.csv")?;
    let s = summary(&dir.join("summary.csv"))?;
    Ok((dir, s))
}

fn c1_feasibility() -> Verdict {
    let t = Instant::now();
    let mut detail = Vec::new();
    let mut bad_total = 0;
    for (kind, n) in [(ProblemKind::Tsp, 20), (ProblemKind::Cvrp, 21)] {
        let (built, bad) = feasibility_sweep(kind, n, 10_000, 1);
        bad_total += bad;
        detail.push(format!("{kind}: {bad}/{built} infeasible"));
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((bad_total == 0 && secs < 120.0, format!("{} in {secs:.1}s", detail.join(", "))))
}

fn c2_gradients() -> Verdict {
    let t = Instant::now();
    let mut worst: f64 = memory_net_error();
    let mut parts = vec![format!("memory net {worst:.1e}")];
    for kind in [ProblemKind::Tsp, ProblemKind::Cvrp] {
        let p = policy_logp_error(kind);
        let (jp, jn) = joint_loss_errors(kind);
        worst = worst.max(p).max(jp).max(jn);
        parts.push(format!("{kind} policy {p:.1e} joint {jp:.1e}/{jn:.1e}"));
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((worst < 1e-4 && secs < 300.0, format!("max rel err {worst:.2e} ({}) in {secs:.1}s", parts.join(", "))))
}

fn c3_neutrality() -> Verdict {
    let mut diff: f64 = 0.0;
    let mut kl: f64 = 0.0;
    for (kind, n) in [(ProblemKind::Tsp, 20), (ProblemKind::Cvrp, 21)] {
        let (d, k) = neutrality(kind, n, 2);
        diff = diff.max(d);
        kl = kl.max(k);
    }
    Ok((diff <= 1e-12 && kl < 1e-3, format!("empty-memory max |dp| {diff:.1e}, fresh-net max KL {kl:.2e}")))
}

fn c4_capacity() -> Verdict {
    let worst = capacity_sweep(1000, 4);
    Ok((worst < 1e-9, format!("max deviation on taken action {worst:.1e} over 1000 cases")))
}

fn c5_telescoping() -> Verdict {
    // Training ledgers.
    let mut ledgers = 0;
    for kind in [ProblemKind::Tsp, ProblemKind::Cvrp] {
        let insts = generate_dataset(kind, 11, 8, 5).unwrap().instances;
        let params = micro_policy(kind, 2);
        let cfg = EpisodeConfig { budget: 20, starts: 6, eps: 0.01, temperature: 1.0, memory: MemoryConfig::default(), policy_grads: false };
        let (g, _) = memento_loss_grad(&insts, &params, &loud_net(FeatureSet::D, 1), &cfg, 9, false).map_err(err)?;
        for l in &g.ledgers {
            l.check_telescoping().map_err(err)?;
            ledgers += 1;
        }
    }
    // Every strategy through the checked evaluation path.
    let mut runs = 0;
    for kind in [ProblemKind::Tsp, ProblemKind::Cvrp] {
        let ds = generate_dataset(kind, 11, 10, 6).unwrap();
        let params = micro_policy(kind, 3);
        let budget = BudgetSpec::new(15, 8, Temperature::Softmax(1.0));
        for s in [
            Strategy::Greedy,
            Strategy::Sampling,
            Strategy::Memento { net: loud_net(FeatureSet::D, 2), memory: MemoryConfig::default() },
            Strategy::Eas(EasConfig::default()),
        ] {
            let rep = evaluate(&ds, &params, &s, &budget, 1, None, false).map_err(err)?;
            runs += rep.traces.len();
        }
    }
    // Curves written by the benchmark runs.
    let mut rows = 0;
    for kind in [ProblemKind::Tsp, ProblemKind::Cvrp] {
        let (dir, _) = benchmark(kind)?;
        for e in std::fs::read_dir(&dir).map_err(err)? {
            let p = e.map_err(err)?.path();
            if !p.file_name().unwrap().to_string_lossy().starts_with("traces_") {
                continue;
            }
            let text = std::fs::read_to_string(&p).map_err(err)?;
            let mut last: Option<(String, f64)> = None;
            for line in text.lines().skip(1) {
                let c: Vec<&str> = line.split(',').collect();
                let best: f64 = c[3].parse().map_err(err)?;
                if let Some((id, prev)) = &last {
                    if id == c[0] && best > *prev {
                        return Ok((false, format!("{}: best-so-far increased for instance {id}", p.display())));
                    }
                }
                last = Some((c[0].to_string(), best));
                rows += 1;
            }
        }
    }
    Ok((true, format!("{ledgers} ledgers telescope, {runs} checked searches, {rows} benchmark trace rows non-increasing")))
}

fn c6_adaptation() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in [ProblemKind::Tsp, ProblemKind::Cvrp] {
        let (_, s) = benchmark(kind)?;
        let m = num(&s, "memento", "mean_best_cost")?;
        let b = num(&s, "sampling", "mean_best_cost")?;
        let p = num(&s, "memento", "p_less_vs_sampling")?;
        let gm = num(&s, "memento", "mean_gap_pct")?;
        let gs = num(&s, "sampling", "mean_gap_pct")?;
        let improvement = gs - gm;
        let pass = m < b && p < 0.05 && improvement >= 0.1;
        ok &= pass;
        parts.push(format!(
            "{kind}: memento {m:.5} vs sampling {b:.5}, p={p:.2e}, gap {gm:.3}% vs {gs:.3}% (improvement {improvement:.3} pts){}",
            if pass { "" } else { " [fails]" }
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn c7_baseline_order() -> Verdict {
    let (_, s) = benchmark(ProblemKind::Tsp)?;
    let wins = num(&s, "eas-analog", "wins_vs_sampling")?;
    let e = num(&s, "eas-analog", "mean_best_cost")?;
    let b = num(&s, "sampling", "mean_best_cost")?;
    let (_, c) = benchmark(ProblemKind::Cvrp)?;
    let cw = num(&c, "eas-analog", "wins_vs_sampling")?;
    Ok((wins >= 70.0, format!("TSP: eas-analog <= sampling on {wins}/100 (mean {e:.5} vs {b:.5}); CVRP (info): {cw}/100")))
}

fn c8_oracle() -> Verdict {
    let params = pretrained_tsp(8, 200, 1);
    let gaps = sampling_gaps_vs_brute_force(&params, 8, 100, 625, 2);
    let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let close = gaps.iter().filter(|&&g| g <= 2.0).count();
    Ok((min >= -1e-9 && close >= 95, format!("min gap {min:.2e}%, {close}/100 within 2% at 5000 trajectories")))
}

fn csv_files(dir: &Path, out: &mut BTreeMap<String, Vec<u8>>, base: &Path) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            csv_files(&p, out, base);
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.insert(p.strip_prefix(base).unwrap().display().to_string(), std::fs::read(&p).unwrap());
        }
    }
}

fn smoke_run(threads: usize, dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    for name in EXPERIMENTS {
        reproduce(name, dir, Scale::Smoke, &[format!("threads={threads}")]).map_err(err)?;
    }
    let mut out = BTreeMap::new();
    csv_files(dir, &mut out, dir);
    Ok(out)
}

fn c9_determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(err)?;
    let reference = smoke_run(1, &tmp.path().join("t1"))?;
    let mut parts = vec![format!("{} CSVs", reference.len())];
    for (label, threads, dir) in [("rerun", 1, "t1-again"), ("4 threads", 4, "t4"), ("8 threads", 8, "t8")] {
        let other = smoke_run(threads, &tmp.path().join(dir))?;
        if other != reference {
            let differ: Vec<_> = reference.keys().filter(|k| other.get(*k) != reference.get(*k)).cloned().collect();
            return Ok((false, format!("{label}: differing files {differ:?}")));
        }
        parts.push(format!("{label} identical"));
    }
    Ok((true, format!("smoke pipelines of all experiments: {}", parts.join(", "))))
}

fn c10_rule_grid() -> Verdict {
    let dir = root().join("rule-grid");
    let trained = root().join("train-memento-tsp20").join("memento.ckpt");
    ensure("rule-grid", ProblemKind::Tsp, &dir, "rule_grid_remaining_0.10.csv")?;
    let net = Checkpoint::load(&trained).map_err(err)?.net.ok_or("trained checkpoint has no memory net")?;
    let tmp = tempfile::tempdir().map_err(err)?;
    let fixed = FixedFeatures::new(horizon(&generate_dataset(ProblemKind::Tsp, 20, 1, 0).unwrap().instances[0]));
    let again = export_rule_grid(&net, &Axes::default(), &fixed, &BUDGET_STAGES, tmp.path()).map_err(err)?;
    let mut ok = again.len() == 3;
    let mut parts = Vec::new();
    for ((_, p), stage) in again.iter().zip(BUDGET_STAGES) {
        let stored = dir.join(p.file_name().unwrap());
        let same = std::fs::read(&stored).ok() == Some(std::fs::read(p).map_err(err)?);
        let grid = rule_grid(&net, &Axes::default(), &fixed, stage).map_err(err)?;
        let (high, low) = quadrant_contrast(&grid).map_err(err)?;
        ok &= same && high > low;
        parts.push(format!("b={stage:.1}: {} reproducible={same} quadrant {high:+.4} vs {low:+.4}", stored.file_name().unwrap().to_string_lossy()));
    }
    Ok((ok, parts.join("; ")))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("feasibility", c1_feasibility),
        ("gradient correctness", c2_gradients),
        ("empty-memory and small-init neutrality", c3_neutrality),
        ("REINFORCE capacity", c4_capacity),
        ("telescoping and monotonicity", c5_telescoping),
        ("desk-scale adaptation", c6_adaptation),
        ("baseline ordering", c7_baseline_order),
        ("oracle gap correctness", c8_oracle),
        ("determinism", c9_determinism),
        ("analysis artifacts", c10_rule_grid),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let verdict = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let (pass, detail) = match verdict {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !pass as usize;
        println!("{} {id:>2} {name}: {detail} [{:.0}s]", if pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use memento::analysis::{
    export_rule_grid, reinforce_capacity_check, run_ablation, write_ablation_csvs, Axes, FixedFeatures, BUDGET_STAGES,
};
use memento::checkpoint::{Checkpoint, Provenance};
use memento::config::{load_config, Config};
use memento::env::horizon;
use memento::experiments::{reproduce, Scale, EXPERIMENTS};
use memento::instances::{generate_dataset, oracle, read_references, write_references, Dataset, ProblemKind};
use memento::memory::{FeatureSet, MemoryNet};
use memento::par;
use memento::policy::Temperature;
use memento::search::{evaluate, write_metrics_csv, BudgetSpec, EasConfig, MemoryConfig, Strategy};
use memento::training::{pretrain, train, write_log_csv};

/// Environment variable holding the default output root.
const OUT_ENV: &str = "MEMENTO_OUT";

#[derive(Parser)]
#[command(name = "memento", version, about = "Memory-guided search for neural routing solvers")]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.budget=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and optionally its reference costs.
    GenData {
        #[arg(long)]
        kind: ProblemKind,
        /// Nodes per instance, depot included.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also compute reference costs into this CSV.
        #[arg(long)]
        references: Option<PathBuf>,
    },
    /// Pretrain a base policy.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the memory net (and optionally the policy) from a base checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a search strategy over a dataset and write per-instance metrics.
    Search {
        #[arg(long)]
        strategy: StrategyName,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 200)]
        budget: usize,
        #[arg(long, default_value_t = 20)]
        starts: usize,
        /// `greedy` or a positive number.
        #[arg(long, default_value = "1")]
        temperature: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Reference costs for gap computation.
        #[arg(long)]
        references: Option<PathBuf>,
        /// Memory slot capacity.
        #[arg(long, default_value_t = 40)]
        memory_capacity: usize,
        /// One memory shared by all start points.
        #[arg(long)]
        shared_memory: bool,
        #[arg(long, default_value_t = EasConfig::default().lr)]
        eas_lr: f64,
        #[arg(long, default_value_t = EasConfig::default().lambda)]
        eas_lambda: f64,
        /// Record wall-clock times (outputs are then not byte-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Analysis exports.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Run a named experiment pipeline with pinned seeds.
    Reproduce {
        /// One of: pretrain-tsp20, train-memento-tsp20, eval-benchmark-tsp20, ablation, rule-grid, cvrp-suite.
        name: String,
        /// Output root (default: $MEMENTO_OUT or ./runs).
        #[arg(long)]
        root: Option<PathBuf>,
        /// Tiny sizes for a quick end-to-end check.
        #[arg(long)]
        smoke: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Subcommand)]
enum Analyze {
    /// Export update-rule grids of a trained memory net.
    RuleGrid {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Nodes of the instances the net was trained on (sets the horizon).
        #[arg(long, default_value_t = 20)]
        n: usize,
    },
    /// Compare the analytic surrogate increment with the REINFORCE logit gradient.
    ReinforceCheck {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        advantage: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate one memory net per feature subset.
    Ablation {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Subsets to run, e.g. `A,D`.
        #[arg(long, default_value = "A,B,C,D")]
        subsets: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyName {
    Greedy,
    Sampling,
    Memento,
    Eas,
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn config(args: &ConfigArgs, threads: usize) -> memento::Result<Config> {
    let mut c = load_config(args.config.as_deref(), &args.overrides)?;
    if !args.overrides.iter().any(|o| o.trim_start().starts_with("threads")) {
        c.threads = threads;
    }
    Ok(c)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = cli.threads.max(1);
    match cli.command {
        Command::GenData { kind, n, count, seed, out, references } => {
            let ds = generate_dataset(kind, n, count, seed)?;
            ds.save(&out)?;
            info!("wrote {} instances to {}", ds.len(), out.display());
            if let Some(r) = references {
                let refs = par::with_threads(threads, || {
                    par::map_slice(&ds.instances, |i| oracle::reference_cost(i, seed).map(|o| o.cost))
                        .into_iter()
                        .collect::<memento::Result<Vec<f64>>>()
                })?;
                let ids: Vec<u64> = ds.instances.iter().map(|i| i.id).collect();
                write_references(&r, &ids, &refs)?;
            }
        }
        Command::Pretrain { cfg, out } => {
            let c = config(&cfg, threads)?;
            let dir = out.unwrap_or_else(|| out_root().join("pretrain"));
            c.write_snapshot(&dir)?;
            let pc = c.pretrain_config()?;
            let mut rows = Vec::new();
            let params = par::with_threads(c.threads, || pretrain(&pc, &mut |r| rows.push(r.clone())))?;
            write_log_csv(&dir.join("pretrain_log.csv"), &rows)?;
            Checkpoint::new(params, None, Provenance::new(&c.snapshot(), c.seed, "pretrain")).save(&dir.join("base.ckpt"))?;
            println!("{}", dir.join("base.ckpt").display());
        }
        Command::Train { cfg, ckpt, out } => {
            let c = config(&cfg, threads)?;
            let base = Checkpoint::load_expecting(&ckpt, &c.policy()?)?;
            let dir = out.unwrap_or_else(|| out_root().join("train"));
            c.write_snapshot(&dir)?;
            let tc = c.train_config()?;
            let net = MemoryNet::init(tc.features, c.seed);
            let prov = Provenance::new(&c.snapshot(), c.seed, "train");
            let outcome = par::with_threads(c.threads, || {
                train(&tc, base.params.clone(), net, &mut |step, p, n| {
                    let mut ck = Checkpoint::new(p.clone(), Some(n.clone()), prov.clone());
                    ck.provenance.command = format!("train@{step}");
                    ck.save(&dir.join(format!("memento_step{step}.ckpt")))
                })
            })?;
            write_log_csv(&dir.join("train_log.csv"), &outcome.log)?;
            let mut ck = Checkpoint::new(outcome.params, Some(outcome.net), prov);
            ck.optim = Some(outcome.optim);
            ck.save(&dir.join("memento.ckpt"))?;
            println!("{}", dir.join("memento.ckpt").display());
        }
        Command::Search {
            strategy,
            ckpt,
            data,
            budget,
            starts,
            temperature,
            seed,
            out,
            references,
            memory_capacity,
            shared_memory,
            eas_lr,
            eas_lambda,
            timing,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let ds = Dataset::load(&data)?;
            let refs = match references {
                Some(p) => {
                    let r = read_references(&p)?;
                    if r.len() != ds.len() {
                        bail!(memento::Error::validation(format!(
                            "reference file has {} rows for {} instances",
                            r.len(),
                            ds.len()
                        )));
                    }
                    Some(r.into_iter().map(|x| x.1).collect::<Vec<f64>>())
                }
                None => None,
            };
            let b = BudgetSpec::new(budget, starts, Temperature::parse(&temperature)?);
            let strat = match strategy {
                StrategyName::Greedy => Strategy::Greedy,
                StrategyName::Sampling => Strategy::Sampling,
                StrategyName::Eas => Strategy::Eas(EasConfig { lr: eas_lr, lambda: eas_lambda, ..EasConfig::default() }),
                StrategyName::Memento => Strategy::Memento {
                    net: ck.net.clone().context("checkpoint has no memory net; train one first")?,
                    memory: MemoryConfig { capacity: memory_capacity, shared: shared_memory },
                },
            };
            let rep = par::with_threads(threads, || evaluate(&ds, &ck.params, &strat, &b, seed, refs.as_deref(), timing))?;
            write_metrics_csv(&out, &rep.rows)?;
            match rep.mean_gap() {
                Some(g) => println!("{}: mean best cost {:.6}, mean gap {:.4}%", strat.name(), rep.mean_best_cost(), g),
                None => println!("{}: mean best cost {:.6}", strat.name(), rep.mean_best_cost()),
            }
        }
        Command::Analyze { what } => analyze(what, threads)?,
        Command::Reproduce { name, root, smoke, mut overrides } => {
            if !EXPERIMENTS.contains(&name.as_str()) {
                bail!(memento::Error::validation(format!(
                    "unknown experiment `{name}`; expected one of {}",
                    EXPERIMENTS.join(", ")
                )));
            }
            if !overrides.iter().any(|o| o.trim_start().starts_with("threads")) {
                overrides.push(format!("threads={threads}"));
            }
            let root = root.unwrap_or_else(out_root);
            let scale = if smoke { Scale::Smoke } else { Scale::Full };
            for f in reproduce(&name, &root, scale, &overrides)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn analyze(what: Analyze, threads: usize) -> anyhow::Result<()> {
    match what {
        Analyze::RuleGrid { ckpt, out, n } => {
            let ck = Checkpoint::load(&ckpt)?;
            let net = ck.net.context("checkpoint has no memory net")?;
            let probe = generate_dataset(ck.params.config.kind, n, 1, 0)?;
            let fixed = FixedFeatures::new(horizon(&probe.instances[0]));
            for (_, p) in export_rule_grid(&net, &Axes::default(), &fixed, &BUDGET_STAGES, &out)? {
                println!("{}", p.display());
            }
        }
        Analyze::ReinforceCheck { ckpt, n, advantage, seed } => {
            let ck = Checkpoint::load(&ckpt)?;
            let inst = generate_dataset(ck.params.config.kind, n, 1, seed)?.instances.remove(0);
            let r = reinforce_capacity_check(&inst, &ck.params, advantage, seed)?;
            println!(
                "decision points: {}\nmax deviation on taken action: {:.3e}\nmax unrepresented off-action term: {:.3e}",
                r.cases, r.max_taken_deviation, r.max_off_action_residual
            );
            if r.max_taken_deviation >= 1e-9 {
                bail!(memento::Error::Divergence("surrogate increment deviates from the REINFORCE gradient".into()));
            }
        }
        Analyze::Ablation { cfg, ckpt, data, subsets, out } => {
            let c = config(&cfg, threads)?;
            let base = Checkpoint::load_expecting(&ckpt, &c.policy()?)?;
            let ds = Dataset::load(&data)?;
            let sets = subsets.split(',').map(|s| s.parse::<FeatureSet>()).collect::<memento::Result<Vec<_>>>()?;
            c.write_snapshot(&out)?;
            let tc = c.train_config()?;
            let results = par::with_threads(c.threads, || run_ablation(&sets, &tc, &base.params, &ds, &c.budget()?, c.seed))?;
            write_ablation_csvs(&out, &results)?;
            for r in &results {
                println!("{}: final mean best {:.6}", r.subset.name(), r.final_mean_best());
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<memento::Error>() {
        Some(e) => e.exit_code() as u8,
        None if err.downcast_ref::<clap::Error>().is_some() => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

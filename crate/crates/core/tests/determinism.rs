//! Outputs must not depend on the number of worker threads.

mod common;

use std::path::Path;

use common::*;
use memento::experiments::{reproduce, Scale};
use memento::par;
use memento::search::{evaluate, BudgetSpec, EasConfig, MemoryConfig, Strategy};
use memento::policy::Temperature;

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in walk(dir) {
        if e.extension().is_some_and(|x| x == "csv") {
            out.push((e.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&e).unwrap()));
        }
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn evaluation_is_thread_count_invariant() {
    let ds = generate_dataset(ProblemKind::Cvrp, 8, 6, 2).unwrap();
    let params = micro_policy(ProblemKind::Cvrp, 1);
    let budget = BudgetSpec::new(4, 3, Temperature::Softmax(1.0));
    for s in [
        Strategy::Sampling,
        Strategy::Memento { net: loud_net(FeatureSet::D, 1), memory: MemoryConfig::default() },
        Strategy::Eas(EasConfig::default()),
    ] {
        let one = par::with_threads(1, || evaluate(&ds, &params, &s, &budget, 5, None, false).unwrap());
        let four = par::with_threads(4, || evaluate(&ds, &params, &s, &budget, 5, None, false).unwrap());
        assert_eq!(one.rows, four.rows, "{}", s.name());
        assert_eq!(one.traces, four.traces, "{}", s.name());
    }
}

#[test]
fn smoke_benchmark_files_are_identical_across_threads() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    reproduce("eval-benchmark-tsp20", a.path(), Scale::Smoke, &["threads=1"]).unwrap();
    reproduce("eval-benchmark-tsp20", b.path(), Scale::Smoke, &["threads=3"]).unwrap();
    let (x, y) = (csvs(a.path()), csvs(b.path()));
    assert!(x.iter().any(|(n, _)| n.ends_with("summary.csv")));
    assert_eq!(x, y);
}

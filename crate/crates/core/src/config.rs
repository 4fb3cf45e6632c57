//! Flat `section.key = value` run configuration.
//!
//! Every key has a default except `problem.kind`. Unknown keys, malformed
//! values and a missing `problem.kind` are errors that name the key.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::instances::ProblemKind;
use crate::memory::FeatureSet;
use crate::optim::LearningRates;
use crate::policy::{PolicyConfig, Temperature};
use crate::search::{BudgetSpec, EasConfig, MemoryConfig};
use crate::training::{PretrainConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub threads: usize,
    /// Record wall-clock times in outputs (breaks byte reproducibility).
    pub timing: bool,
    pub kind: Option<ProblemKind>,
    /// Nodes per instance, depot included.
    pub n: usize,
    pub data_count: usize,
    pub data_seed: u64,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub clip: f64,
    pub pretrain_batch: usize,
    pub pretrain_starts: usize,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub train: TrainSection,
    pub search_budget: usize,
    pub search_starts: usize,
    pub search_temperature: Temperature,
    pub eas: EasConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub budget: usize,
    pub batch: usize,
    pub starts: usize,
    pub accumulation: usize,
    pub lr_memory: f64,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub eps: f64,
    pub steps: usize,
    pub refine: bool,
    pub temperature: f64,
    pub features: FeatureSet,
    pub memory_capacity: usize,
    pub shared_memory: bool,
    pub checkpoint_every: usize,
}

/// Every accepted key, in snapshot order.
pub const KEYS: &[&str] = &[
    "seed",
    "threads",
    "timing",
    "problem.kind",
    "problem.n",
    "data.count",
    "data.seed",
    "policy.dim",
    "policy.layers",
    "policy.heads",
    "policy.ff",
    "policy.clip",
    "pretrain.batch",
    "pretrain.starts",
    "pretrain.steps",
    "pretrain.lr",
    "train.budget",
    "train.batch",
    "train.starts",
    "train.accumulation",
    "train.lr_memory",
    "train.lr_encoder",
    "train.lr_decoder",
    "train.eps",
    "train.steps",
    "train.refine",
    "train.temperature",
    "train.features",
    "train.memory_capacity",
    "train.shared_memory",
    "train.checkpoint_every",
    "search.budget",
    "search.starts",
    "search.temperature",
    "search.eas_lr",
    "search.eas_lambda",
    "search.eas_max_worsening",
];

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            threads: 1,
            timing: false,
            kind: None,
            n: 20,
            data_count: 100,
            data_seed: 1,
            dim: 64,
            layers: 2,
            heads: 4,
            ff: 128,
            clip: 10.0,
            pretrain_batch: 32,
            pretrain_starts: 20,
            pretrain_steps: 1000,
            pretrain_lr: 1e-3,
            train: TrainSection {
                budget: 50,
                batch: 16,
                starts: 20,
                accumulation: 4,
                lr_memory: 0.004,
                lr_encoder: 1e-4,
                lr_decoder: 1e-4,
                eps: 0.01,
                steps: 100,
                refine: false,
                temperature: 1.0,
                features: FeatureSet::D,
                memory_capacity: 40,
                shared_memory: false,
                checkpoint_every: 0,
            },
            search_budget: 200,
            search_starts: 20,
            search_temperature: Temperature::Softmax(1.0),
            eas: EasConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::validation(format!("key `{key}`: expected {what}, got `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::validation(format!("key `{key}`: expected true or false, got `{value}`"))),
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let uint = "a non-negative integer";
        let real = "a number";
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, v, uint)?,
            "threads" => self.threads = parse(key, v, uint)?,
            "timing" => self.timing = parse_bool(key, v)?,
            "problem.kind" => {
                self.kind = Some(v.parse().map_err(|_| Error::validation(format!("key `{key}`: expected tsp or cvrp, got `{v}`")))?)
            }
            "problem.n" => self.n = parse(key, v, uint)?,
            "data.count" => self.data_count = parse(key, v, uint)?,
            "data.seed" => self.data_seed = parse(key, v, uint)?,
            "policy.dim" => self.dim = parse(key, v, uint)?,
            "policy.layers" => self.layers = parse(key, v, uint)?,
            "policy.heads" => self.heads = parse(key, v, uint)?,
            "policy.ff" => self.ff = parse(key, v, uint)?,
            "policy.clip" => self.clip = parse(key, v, real)?,
            "pretrain.batch" => self.pretrain_batch = parse(key, v, uint)?,
            "pretrain.starts" => self.pretrain_starts = parse(key, v, uint)?,
            "pretrain.steps" => self.pretrain_steps = parse(key, v, uint)?,
            "pretrain.lr" => self.pretrain_lr = parse(key, v, real)?,
            "train.budget" => t.budget = parse(key, v, uint)?,
            "train.batch" => t.batch = parse(key, v, uint)?,
            "train.starts" => t.starts = parse(key, v, uint)?,
            "train.accumulation" => t.accumulation = parse(key, v, uint)?,
            "train.lr_memory" => t.lr_memory = parse(key, v, real)?,
            "train.lr_encoder" => t.lr_encoder = parse(key, v, real)?,
            "train.lr_decoder" => t.lr_decoder = parse(key, v, real)?,
            "train.eps" => t.eps = parse(key, v, real)?,
            "train.steps" => t.steps = parse(key, v, uint)?,
            "train.refine" => t.refine = parse_bool(key, v)?,
            "train.temperature" => t.temperature = parse(key, v, real)?,
            "train.features" => t.features = v.parse().map_err(|_| Error::validation(format!("key `{key}`: expected A, B, C or D, got `{v}`")))?,
            "train.memory_capacity" => t.memory_capacity = parse(key, v, uint)?,
            "train.shared_memory" => t.shared_memory = parse_bool(key, v)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(key, v, uint)?,
            "search.budget" => self.search_budget = parse(key, v, uint)?,
            "search.starts" => self.search_starts = parse(key, v, uint)?,
            "search.temperature" => {
                self.search_temperature = Temperature::parse(v).map_err(|_| Error::validation(format!("key `{key}`: expected greedy or a positive number, got `{v}`")))?
            }
            "search.eas_lr" => self.eas.lr = parse(key, v, real)?,
            "search.eas_lambda" => self.eas.lambda = parse(key, v, real)?,
            "search.eas_max_worsening" => self.eas.max_worsening = parse(key, v, real)?,
            _ => return Err(Error::validation(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "seed" => self.seed.to_string(),
            "threads" => self.threads.to_string(),
            "timing" => self.timing.to_string(),
            "problem.kind" => self.kind.map(|k| k.to_string()).unwrap_or_default(),
            "problem.n" => self.n.to_string(),
            "data.count" => self.data_count.to_string(),
            "data.seed" => self.data_seed.to_string(),
            "policy.dim" => self.dim.to_string(),
            "policy.layers" => self.layers.to_string(),
            "policy.heads" => self.heads.to_string(),
            "policy.ff" => self.ff.to_string(),
            "policy.clip" => self.clip.to_string(),
            "pretrain.batch" => self.pretrain_batch.to_string(),
            "pretrain.starts" => self.pretrain_starts.to_string(),
            "pretrain.steps" => self.pretrain_steps.to_string(),
            "pretrain.lr" => self.pretrain_lr.to_string(),
            "train.budget" => t.budget.to_string(),
            "train.batch" => t.batch.to_string(),
            "train.starts" => t.starts.to_string(),
            "train.accumulation" => t.accumulation.to_string(),
            "train.lr_memory" => t.lr_memory.to_string(),
            "train.lr_encoder" => t.lr_encoder.to_string(),
            "train.lr_decoder" => t.lr_decoder.to_string(),
            "train.eps" => t.eps.to_string(),
            "train.steps" => t.steps.to_string(),
            "train.refine" => t.refine.to_string(),
            "train.temperature" => t.temperature.to_string(),
            "train.features" => t.features.name().to_string(),
            "train.memory_capacity" => t.memory_capacity.to_string(),
            "train.shared_memory" => t.shared_memory.to_string(),
            "train.checkpoint_every" => t.checkpoint_every.to_string(),
            "search.budget" => self.search_budget.to_string(),
            "search.starts" => self.search_starts.to_string(),
            "search.temperature" => self.search_temperature.to_string(),
            "search.eas_lr" => self.eas.lr.to_string(),
            "search.eas_lambda" => self.eas.lambda.to_string(),
            "search.eas_max_worsening" => self.eas.max_worsening.to_string(),
            _ => return None,
        })
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::validation(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::validation(format!("key `{k}` appears twice")));
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Apply `key=value` override strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::validation(format!("override `{o}` is not of the form key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn kind(&self) -> Result<ProblemKind> {
        self.kind.ok_or_else(|| Error::validation("missing required key `problem.kind`"))
    }

    /// Resolved configuration, one `key = value` line per known key.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            out.push_str(&format!("{k} = {}\n", self.get(k).unwrap()));
        }
        out
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("resolved_config.txt"), self.snapshot())?;
        Ok(())
    }

    pub fn policy(&self) -> Result<PolicyConfig> {
        let c = PolicyConfig {
            kind: self.kind()?,
            dim: self.dim,
            layers: self.layers,
            heads: self.heads,
            ff: self.ff,
            clip: self.clip,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig> {
        let c = PretrainConfig {
            policy: self.policy()?,
            n: self.n,
            batch: self.pretrain_batch,
            starts: self.pretrain_starts,
            steps: self.pretrain_steps,
            lr: self.pretrain_lr,
            seed: self.seed,
            timing: self.timing,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let c = TrainConfig {
            kind: self.kind()?,
            n: self.n,
            budget: t.budget,
            batch: t.batch,
            starts: t.starts,
            accumulation: t.accumulation,
            lrs: LearningRates { memory: t.lr_memory, encoder: t.lr_encoder, decoder: t.lr_decoder },
            eps: t.eps,
            steps: t.steps,
            seed: self.seed,
            refine: t.refine,
            temperature: t.temperature,
            features: t.features,
            memory: self.memory(),
            checkpoint_every: t.checkpoint_every,
            timing: self.timing,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn memory(&self) -> MemoryConfig {
        MemoryConfig { capacity: self.train.memory_capacity, shared: self.train.shared_memory }
    }

    pub fn budget(&self) -> Result<BudgetSpec> {
        let b = BudgetSpec::new(self.search_budget, self.search_starts, self.search_temperature);
        b.validate()?;
        Ok(b)
    }
}

/// Defaults, then the file (if any), then the overrides.
pub fn load_config<S: AsRef<str>>(path: Option<&Path>, overrides: &[S]) -> Result<Config> {
    let mut c = Config::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Error::validation(format!("cannot read config `{}`: {e}", p.display())))?;
        c.apply_text(&text)?;
    }
    c.apply_overrides(overrides)?;
    c.kind()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let mut c = Config::default();
        c.kind = Some(ProblemKind::Cvrp);
        for k in KEYS {
            let v = c.get(k).unwrap();
            let mut d = c.clone();
            d.set(k, &v).unwrap();
            assert_eq!(d, c, "{k}");
        }
        let mut back = Config::default();
        back.apply_text(&c.snapshot()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn file_values_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# comment\nproblem.kind = tsp\ntrain.budget = 30\n").unwrap();
        let c = load_config::<&str>(Some(&p), &[]).unwrap();
        assert_eq!(c.train.budget, 30);
        let c = load_config(Some(&p), &["train.budget=200"]).unwrap();
        assert_eq!(c.train.budget, 200);
    }

    #[test]
    fn errors_name_the_key() {
        let e = load_config(None, &["problem.kind=tsp", "budgett=3"]).unwrap_err().to_string();
        assert!(e.contains("budgett"), "{e}");
        let e = load_config(None, &["problem.kind=tsp", "train.budget=many"]).unwrap_err().to_string();
        assert!(e.contains("train.budget"), "{e}");
        let e = load_config::<&str>(None, &[]).unwrap_err().to_string();
        assert!(e.contains("problem.kind"), "{e}");
    }
}

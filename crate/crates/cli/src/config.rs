//! TOML training configuration and the corpus/suite descriptions shared by
//! the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use msn_core::data::{gen_synthetic, load_jsonl, Corpus, Task};
use msn_core::model::{init_model, ModelConfig};
use msn_core::msn::{train, NoiseConfig, StepLog, TrainObjective, TrainReport, TrainSchedule};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CorpusDescriptor};

/// Either a JSONL file or a synthetic mixture of tasks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub path: Option<PathBuf>,
    pub tasks: Vec<Task>,
    /// Samples per task.
    pub samples: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            path: None,
            tasks: vec![Task::Copy],
            samples: 1000,
            min_len: 4,
            max_len: 12,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn synthetic(tasks: &[Task], samples: usize, min_len: usize, max_len: usize, seed: u64) -> Self {
        Self {
            path: None,
            tasks: tasks.to_vec(),
            samples,
            min_len,
            max_len,
            seed,
        }
    }

    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        Self {
            path: Some(path.into()),
            ..Self::default()
        }
    }

    pub fn resolve(&self, max_positions: usize) -> Result<Corpus> {
        if let Some(path) = &self.path {
            return load_jsonl(path, max_positions).with_context(|| format!("loading corpus {}", path.display()));
        }
        if self.tasks.is_empty() {
            bail!("corpus needs either `path` or a non-empty `tasks` list");
        }
        if self.min_len > self.max_len {
            bail!("corpus min_len {} exceeds max_len {}", self.min_len, self.max_len);
        }
        let parts: Vec<Corpus> = self
            .tasks
            .iter()
            .map(|&t| gen_synthetic(t, self.samples, self.min_len..=self.max_len, self.seed))
            .collect();
        let name = self.tasks.iter().map(|t| t.name()).collect::<Vec<_>>().join("+");
        let corpus = Corpus::concat(&name, &parts);
        if let Some(i) = corpus.samples.iter().position(|s| !s.fits(max_positions)) {
            bail!("synthetic sample {i} does not fit in {max_positions} positions");
        }
        Ok(corpus)
    }
}

/// Everything `train` needs. Every section is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// When set, overrides the model, noise and shuffle seeds.
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    pub train: TrainSchedule,
    pub corpus: CorpusSpec,
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = cfg.corpus.path.take() {
            cfg.corpus.path = Some(base.join(p));
        }
        if let Some(p) = cfg.output.take() {
            cfg.output = Some(base.join(p));
        }
        Ok(cfg)
    }

    /// Model, noise and shuffle seeds after applying the top-level `seed`.
    pub fn effective(&self) -> TrainConfig {
        let mut cfg = self.clone();
        if let Some(seed) = self.seed {
            cfg.model.seed = seed;
            cfg.noise.seed = seed;
            cfg.train.seed = seed;
        }
        cfg
    }

    pub fn objective(&self) -> TrainObjective {
        if self.noise.segment_len == 0 {
            TrainObjective::Sft
        } else {
            TrainObjective::Msn(self.noise.clone())
        }
    }
}

/// Initializes a model, trains it and wraps the result as a checkpoint.
pub fn run_training(cfg: &TrainConfig, on_step: impl FnMut(&StepLog)) -> Result<(Checkpoint, TrainReport)> {
    let cfg = cfg.effective();
    let corpus = cfg.corpus.resolve(cfg.model.max_positions)?;
    let mut weights = init_model(&cfg.model)?;
    let report = train(&mut weights, &corpus, &cfg.objective(), &cfg.train, on_step)?;
    let ckpt = Checkpoint {
        noise: cfg.noise.clone(),
        corpus: CorpusDescriptor::of(&corpus),
        weights,
    };
    Ok((ckpt, report))
}

//! One-axis sweeps: training noise length, inference block length, and the
//! retrieval chain on or off.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, ensure, Result};
use msn_core::data::Corpus;
use msn_core::decode::{DraftTreeTemplate, RetrievalConfig, Strategy, DEFAULT_BLOCK_LEN};
use msn_core::model::TransformerWeights;
use serde::{Deserialize, Serialize};

use crate::bench::{exact_match, measure, split_by_task, BenchOptions};
use crate::config::{run_training, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Retrains with each noise length and decodes with that block length.
    TrainNoiseLen,
    /// Decodes one model with Jacobi at each block length.
    InferBlockLen,
    /// Decodes one model with the tree template without (0) and with (1) its
    /// retrieval chain.
    RetrievalOnOff,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::TrainNoiseLen => "train_noise_len",
            SweepAxis::InferBlockLen => "infer_block_len",
            SweepAxis::RetrievalOnOff => "retrieval_on_off",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train_noise_len" => Ok(SweepAxis::TrainNoiseLen),
            "infer_block_len" => Ok(SweepAxis::InferBlockLen),
            "retrieval_on_off" => Ok(SweepAxis::RetrievalOnOff),
            other => Err(format!(
                "unknown sweep axis `{other}` (expected train_noise_len, infer_block_len or retrieval_on_off)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.values.is_empty(),
            "sweep over {} needs at least one value",
            self.axis
        );
        match self.axis {
            SweepAxis::InferBlockLen => {
                ensure!(self.values.iter().all(|&v| v >= 1), "block lengths must be at least 1")
            }
            SweepAxis::RetrievalOnOff => {
                ensure!(
                    self.values.iter().all(|&v| v <= 1),
                    "retrieval values must be 0 (off) or 1 (on)"
                )
            }
            SweepAxis::TrainNoiseLen => {}
        }
        Ok(())
    }
}

/// Models to sweep over: retrained per value, or one fixed checkpoint.
pub enum SweepModels<'a> {
    Train {
        base: &'a TrainConfig,
        /// Trained checkpoints are saved here as `noise{L}.ckpt` when set.
        save_dir: Option<&'a Path>,
    },
    Fixed(&'a TransformerWeights),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: usize,
    pub task: String,
    pub strategy: String,
    pub prompts: usize,
    pub committed_tokens: usize,
    pub decode_forwards: usize,
    pub mat: f64,
    pub tokens_per_second: f64,
    pub exact_match: f64,
    /// Final-epoch training loss when the axis retrains.
    pub train_loss: Option<f64>,
}

/// Strategy used for one value of a sweep. `train_noise_len` decodes with a
/// Jacobi block as long as the training span (the default length for L=0).
pub fn strategy_for(axis: SweepAxis, value: usize, template: &DraftTreeTemplate) -> Strategy {
    match axis {
        SweepAxis::TrainNoiseLen => Strategy::Jacobi {
            block_len: if value == 0 { DEFAULT_BLOCK_LEN } else { value },
        },
        SweepAxis::InferBlockLen => Strategy::Jacobi { block_len: value },
        SweepAxis::RetrievalOnOff if value == 0 => Strategy::Tree(template.without_retrieval()),
        SweepAxis::RetrievalOnOff => Strategy::TrJacobi {
            template: template.clone(),
            retrieval: RetrievalConfig::default(),
        },
    }
}

/// Runs the sweep and returns one row per (value, task), in value order.
pub fn run_sweep(
    spec: &SweepSpec,
    models: SweepModels<'_>,
    suite: &Corpus,
    template: &DraftTreeTemplate,
    opts: &BenchOptions,
    mut progress: impl FnMut(&str),
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    ensure!(!suite.is_empty(), "sweep suite `{}` is empty", suite.name);
    if spec.axis == SweepAxis::RetrievalOnOff && !template.has_retrieval() {
        bail!("retrieval sweep needs a template with a retrieval chain");
    }
    if matches!(models, SweepModels::Fixed(_)) && spec.axis == SweepAxis::TrainNoiseLen {
        bail!("sweep over train_noise_len needs a training config");
    }
    let tasks = split_by_task(suite);
    let mut rows = Vec::new();
    for &value in &spec.values {
        let (trained, train_loss);
        let weights = match &models {
            SweepModels::Fixed(w) => {
                train_loss = None;
                *w
            }
            SweepModels::Train { base, save_dir } => {
                ensure!(
                    spec.axis == SweepAxis::TrainNoiseLen,
                    "sweep over {} needs a checkpoint, not a training config",
                    spec.axis
                );
                let mut cfg = (*base).clone();
                cfg.noise.segment_len = value;
                progress(&format!("training with noise length {value}"));
                let (ckpt, report) = run_training(&cfg, |_| {})?;
                if let Some(dir) = save_dir {
                    ckpt.save(&dir.join(format!("noise{value}.ckpt")))?;
                }
                train_loss = report.epoch_losses.last().copied();
                trained = ckpt.weights;
                &trained
            }
        };
        let strategy = strategy_for(spec.axis, value, template);
        for (task, samples) in &tasks {
            progress(&format!("{}={value}: {strategy} on {task}", spec.axis));
            let (run, wall) = measure(weights, samples, &strategy, opts)?;
            rows.push(SweepRow {
                axis: spec.axis,
                value,
                task: task.clone(),
                strategy: strategy.to_string(),
                prompts: samples.len(),
                committed_tokens: run.committed_tokens,
                decode_forwards: run.decode_forwards,
                mat: run.committed_tokens as f64 / run.decode_forwards.max(1) as f64,
                tokens_per_second: run.committed_tokens as f64 / wall.max(f64::MIN_POSITIVE),
                exact_match: exact_match(samples, &run.outputs),
                train_loss,
            });
        }
    }
    Ok(rows)
}

pub fn format_table(rows: &[SweepRow]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<17} {:>5} {:<10} {:<14} {:>6} {:>9} {:>6} {:>10}",
        "axis", "value", "task", "strategy", "MAT", "tok/s", "EM", "train_loss"
    );
    for r in rows {
        let loss = r.train_loss.map_or("-".to_string(), |l| format!("{l:.4}"));
        let _ = writeln!(
            out,
            "{:<17} {:>5} {:<10} {:<14} {:>6.2} {:>9.1} {:>6.3} {:>10}",
            r.axis.name(),
            r.value,
            r.task,
            r.strategy,
            r.mat,
            r.tokens_per_second,
            r.exact_match,
            loss
        );
    }
    out
}

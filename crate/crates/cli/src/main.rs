//! `msn`: train, decode, evaluate and benchmark small noise-trained models.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use msn_cli::bench::{format_table, run_bench, to_jsonl, BenchOptions};
use msn_cli::checkpoint::Checkpoint;
use msn_cli::config::{run_training, CorpusSpec, TrainConfig};
use msn_cli::sweep::{self, run_sweep, SweepAxis, SweepModels, SweepSpec};
use msn_core::data::{exact_match_eval, render, Corpus, Task, EOS};
use msn_core::decode::{generate, DecodeOptions, DraftTreeTemplate, Strategy, DEFAULT_BLOCK_LEN};
use msn_core::msn::{denoise_accuracy, LocationPolicy};

#[derive(Parser)]
#[command(
    name = "msn",
    version,
    about = "Noise-trained byte-level models with parallel decoding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config and write a checkpoint.
    Train(TrainArgs),
    /// Decode one prompt; the continuation goes to stdout, metrics to stderr.
    Generate(GenerateArgs),
    /// Exact-match or denoising accuracy on a suite.
    Eval(EvalArgs),
    /// Mean accepted tokens and throughput per strategy and task.
    Bench(BenchArgs),
    /// Vary one setting and report mean accepted tokens per value.
    Sweep(SweepArgs),
    /// Write a synthetic corpus as JSONL.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `noise.segment_len`; 0 trains the plain SFT baseline.
    #[arg(long)]
    noise_len: Option<usize>,
    #[arg(long)]
    noise_policy: Option<LocationPolicy>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's `output`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Print a loss line every this many steps (0 for none).
    #[arg(long, default_value_t = 50)]
    log_every: usize,
}

/// Prompts to evaluate on: a JSONL file or freshly generated synthetic tasks.
#[derive(Args)]
struct SuiteArgs {
    #[arg(long, conflicts_with = "tasks")]
    suite: Option<PathBuf>,
    /// Comma-separated synthetic tasks (copy, reverse, kv_lookup, arith).
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<Task>,
    /// Synthetic samples per task.
    #[arg(long, default_value_t = 50)]
    samples: usize,
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    #[arg(long, default_value_t = 1_000_003)]
    suite_seed: u64,
}

impl SuiteArgs {
    fn load(&self, max_positions: usize) -> Result<Corpus> {
        let spec = match &self.suite {
            Some(path) => CorpusSpec::from_path(path),
            None if self.tasks.is_empty() => bail!("give either --suite or --tasks"),
            None => CorpusSpec::synthetic(&self.tasks, self.samples, self.min_len, self.max_len, self.suite_seed),
        };
        spec.resolve(max_positions)
    }
}

#[derive(Args)]
struct DecodeArgs {
    /// Jacobi block length; defaults to the checkpoint's training noise length.
    #[arg(long)]
    block_len: Option<usize>,
    /// Tree template file (`id parent is_retrieval` per line).
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    max_new: usize,
    /// Seeds the ahead-noise drafts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DecodeArgs {
    fn block_len(&self, ckpt: &Checkpoint) -> usize {
        self.block_len.unwrap_or(match ckpt.noise.segment_len {
            0 => DEFAULT_BLOCK_LEN,
            l => l,
        })
    }

    fn template(&self) -> Result<DraftTreeTemplate> {
        Ok(match &self.template {
            Some(p) => DraftTreeTemplate::load(p).with_context(|| format!("loading template {}", p.display()))?,
            None => DraftTreeTemplate::default(),
        })
    }

    fn strategy(&self, name: &str, ckpt: &Checkpoint) -> Result<Strategy> {
        Ok(Strategy::from_name(name, self.block_len(ckpt), Some(self.template()?))?)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value = "ar")]
    strategy: String,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Exact,
    Denoise,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    suite: SuiteArgs,
    /// Only score samples of this task.
    #[arg(long)]
    task: Option<Task>,
    #[arg(long, value_enum, default_value = "exact")]
    metric: Metric,
    /// Decoding strategy for the exact metric.
    #[arg(long, default_value = "ar")]
    strategy: String,
    /// Span length for the denoise metric; defaults to the training length.
    #[arg(long)]
    noise_len: Option<usize>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// One or more checkpoints (repeat the flag).
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[command(flatten)]
    suite: SuiteArgs,
    #[arg(long, value_delimiter = ',', default_value = "ar,jacobi,tr-jacobi")]
    strategies: Vec<String>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// JSONL report path.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    axis: SweepAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    /// Training config for the train_noise_len axis.
    #[arg(long, required_if_eq("axis", "train_noise_len"))]
    config: Option<PathBuf>,
    /// Checkpoint for the other axes.
    #[arg(long, conflicts_with = "config")]
    checkpoint: Option<PathBuf>,
    /// Where retrained checkpoints are kept.
    #[arg(long)]
    save_dir: Option<PathBuf>,
    #[command(flatten)]
    suite: SuiteArgs,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    tasks: Vec<Task>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::GenData(a) => cmd_gen_data(a),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(l) = a.noise_len {
        cfg.noise.segment_len = l;
    }
    if let Some(p) = a.noise_policy {
        cfg.noise.policy = p;
    }
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    let output = a
        .output
        .or_else(|| cfg.output.clone())
        .context("no checkpoint path: set `output` in the config or pass --output")?;
    let (ckpt, report) = run_training(&cfg, |log| {
        if a.log_every > 0 && log.step % a.log_every == 0 {
            eprintln!(
                "step {:>6}  epoch {:>3}  loss {:.4}  lr {:.2e}",
                log.step, log.epoch, log.loss, log.lr
            );
        }
    })?;
    ckpt.save(&output)?;
    eprintln!(
        "wrote {} ({} steps, {:.1}s)",
        output.display(),
        report.steps,
        report.wall_seconds
    );
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let strategy = a.decode.strategy(&a.strategy, &ckpt)?;
    let prompt = msn_core::data::tokenize(a.prompt.as_bytes());
    let g = generate(
        &ckpt.weights,
        &prompt,
        &strategy,
        DecodeOptions {
            max_new: a.decode.max_new,
            seed: a.decode.seed,
        },
    )?;
    let text: Vec<u8> = g
        .tokens
        .iter()
        .take_while(|&&t| t != EOS)
        .filter(|&&t| t < 256)
        .map(|&t| t as u8)
        .collect();
    let mut out = std::io::stdout().lock();
    out.write_all(&text)?;
    out.write_all(b"\n")?;
    eprintln!("{}", serde_json::to_string(&g.metrics)?);
    Ok(())
}

fn filter_task(mut suite: Corpus, task: Option<Task>) -> Result<Corpus> {
    if let Some(t) = task {
        suite.samples.retain(|s| s.task.as_deref() == Some(t.name()));
        if suite.samples.is_empty() {
            bail!("suite `{}` has no `{t}` samples", suite.name);
        }
    }
    Ok(suite)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let suite = filter_task(a.suite.load(ckpt.weights.config.max_positions)?, a.task)?;
    let (name, value) = match a.metric {
        Metric::Exact => {
            let strategy = a.decode.strategy(&a.strategy, &ckpt)?;
            (
                "exact",
                exact_match_eval(&ckpt.weights, &suite, &strategy, a.decode.seed)?,
            )
        }
        Metric::Denoise => {
            let len = a.noise_len.unwrap_or(match ckpt.noise.segment_len {
                0 => DEFAULT_BLOCK_LEN,
                l => l,
            });
            ("denoise", denoise_accuracy(&ckpt.weights, &suite, len, a.decode.seed)?)
        }
    };
    println!("{name} {value:.4} ({} samples)", suite.len());
    Ok(())
}

fn model_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn write_report(path: Option<&Path>, jsonl: &str) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, jsonl).with_context(|| format!("writing report {}", p.display()))?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let opts = BenchOptions {
        reps: a.reps,
        max_new: a.decode.max_new,
        seed: a.decode.seed,
    };
    let mut records = Vec::new();
    for path in &a.checkpoint {
        let ckpt = Checkpoint::load(path)?;
        let suite = a.suite.load(ckpt.weights.config.max_positions)?;
        let strategies = a
            .strategies
            .iter()
            .map(|s| a.decode.strategy(s, &ckpt))
            .collect::<Result<Vec<_>>>()?;
        records.extend(run_bench(
            &model_label(path),
            &ckpt.weights,
            &suite,
            &strategies,
            &opts,
        )?);
    }
    write_report(a.report.as_deref(), &to_jsonl(&records)?)?;
    print!("{}", format_table(&records));
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let spec = SweepSpec {
        axis: a.axis,
        values: a.values,
    };
    let opts = BenchOptions {
        reps: a.reps,
        max_new: a.decode.max_new,
        seed: a.decode.seed,
    };
    let template = a.decode.template()?;
    let progress = |msg: &str| eprintln!("{msg}");
    let rows = match (&a.config, &a.checkpoint) {
        (Some(cfg_path), _) => {
            let cfg = TrainConfig::load(cfg_path)?;
            let suite = a.suite.load(cfg.model.max_positions)?;
            let models = SweepModels::Train {
                base: &cfg,
                save_dir: a.save_dir.as_deref(),
            };
            run_sweep(&spec, models, &suite, &template, &opts, progress)?
        }
        (None, Some(path)) => {
            let ckpt = Checkpoint::load(path)?;
            let suite = a.suite.load(ckpt.weights.config.max_positions)?;
            run_sweep(
                &spec,
                SweepModels::Fixed(&ckpt.weights),
                &suite,
                &template,
                &opts,
                progress,
            )?
        }
        (None, None) => bail!("sweep needs --config (train_noise_len) or --checkpoint"),
    };
    write_report(a.report.as_deref(), &to_jsonl(&rows)?)?;
    print!("{}", sweep::format_table(&rows));
    Ok(())
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let spec = CorpusSpec::synthetic(&a.tasks, a.samples, a.min_len, a.max_len, a.seed);
    let corpus = spec.resolve(usize::MAX)?;
    corpus.write_jsonl(&a.output)?;
    eprintln!(
        "wrote {} samples to {}; first: {}",
        corpus.len(),
        a.output.display(),
        render(&corpus.samples[0].prompt)
    );
    Ok(())
}

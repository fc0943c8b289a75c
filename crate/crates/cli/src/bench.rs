//! Per-(strategy, task) decoding benchmarks with AR as the speed baseline.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use anyhow::{bail, ensure, Result};
use msn_core::data::{Corpus, SftSample, EOS};
use msn_core::decode::{generate, DecodeOptions, Strategy};
use msn_core::model::TransformerWeights;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchOptions {
    /// Timed repetitions per cell; the median wall time is reported.
    pub reps: usize,
    pub max_new: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            reps: 3,
            max_new: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub model: String,
    pub task: String,
    pub strategy: String,
    pub prompts: usize,
    pub committed_tokens: usize,
    pub decode_forwards: usize,
    pub mat: f64,
    /// Median over repetitions of the wall time for the whole task.
    pub wall_seconds: f64,
    pub tokens_per_second: f64,
    pub speedup: f64,
    pub exact_match: f64,
    /// Hash of every generated token; equal across reruns of a checkpoint.
    pub output_digest: u64,
}

/// Decoded outputs and counters for one pass over a task's prompts.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskRun {
    pub outputs: Vec<Vec<u32>>,
    pub committed_tokens: usize,
    pub decode_forwards: usize,
    pub wall_seconds: f64,
}

pub fn run_task(
    weights: &TransformerWeights,
    samples: &[&SftSample],
    strategy: &Strategy,
    opts: &BenchOptions,
) -> Result<TaskRun> {
    let mut run = TaskRun {
        outputs: Vec::with_capacity(samples.len()),
        committed_tokens: 0,
        decode_forwards: 0,
        wall_seconds: 0.0,
    };
    let started = Instant::now();
    for s in samples {
        let g = generate(
            weights,
            &s.prompt,
            strategy,
            DecodeOptions {
                max_new: opts.max_new,
                seed: opts.seed,
            },
        )?;
        run.committed_tokens += g.metrics.committed_tokens;
        run.decode_forwards += g.metrics.decode_forwards;
        run.outputs.push(g.tokens);
    }
    run.wall_seconds = started.elapsed().as_secs_f64();
    Ok(run)
}

/// Runs a task `opts.reps` times, checks that the tokens never change and
/// returns the first run with the median wall time.
pub fn measure(
    weights: &TransformerWeights,
    samples: &[&SftSample],
    strategy: &Strategy,
    opts: &BenchOptions,
) -> Result<(TaskRun, f64)> {
    ensure!(opts.reps >= 1, "at least one repetition is required");
    let first = run_task(weights, samples, strategy, opts)?;
    let mut walls = vec![first.wall_seconds];
    for _ in 1..opts.reps {
        let run = run_task(weights, samples, strategy, opts)?;
        if run.outputs != first.outputs {
            bail!("{strategy} produced different tokens across repetitions");
        }
        walls.push(run.wall_seconds);
    }
    Ok((first, median(walls)))
}

/// Groups samples by their task label, in order of first appearance.
pub fn split_by_task(suite: &Corpus) -> Vec<(String, Vec<&SftSample>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&SftSample>> = BTreeMap::new();
    for s in &suite.samples {
        let task = s.task.clone().unwrap_or_else(|| suite.name.clone());
        if !groups.contains_key(&task) {
            order.push(task.clone());
        }
        groups.entry(task).or_default().push(s);
    }
    order
        .into_iter()
        .map(|t| {
            let g = groups.remove(&t).expect("grouped");
            (t, g)
        })
        .collect()
}

pub fn exact_match(samples: &[&SftSample], outputs: &[Vec<u32>]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hits = samples
        .iter()
        .zip(outputs)
        .filter(|(s, out)| {
            let end = out.iter().position(|&t| t == EOS).map_or(out.len(), |i| i + 1);
            out[..end] == s.response[..]
        })
        .count();
    hits as f64 / samples.len() as f64
}

fn digest(outputs: &[Vec<u32>]) -> u64 {
    let mut h = DefaultHasher::new();
    outputs.hash(&mut h);
    h.finish()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Runs every strategy on every task of `suite`. AR runs first on each task
/// (added if not requested) and is the denominator of `speedup`.
pub fn run_bench(
    model: &str,
    weights: &TransformerWeights,
    suite: &Corpus,
    strategies: &[Strategy],
    opts: &BenchOptions,
) -> Result<Vec<BenchRecord>> {
    ensure!(!suite.is_empty(), "benchmark suite `{}` is empty", suite.name);
    ensure!(!strategies.is_empty(), "no strategies requested");
    let mut order = vec![Strategy::Ar];
    for s in strategies {
        if !order.contains(s) {
            order.push(s.clone());
        }
    }
    let mut records = Vec::new();
    for (task, samples) in split_by_task(suite) {
        let mut ar_tps = None;
        for strategy in &order {
            let (run, wall) = measure(weights, &samples, strategy, opts)?;
            let tps = run.committed_tokens as f64 / wall.max(f64::MIN_POSITIVE);
            let base = *ar_tps.get_or_insert(tps);
            records.push(BenchRecord {
                model: model.to_string(),
                task: task.clone(),
                strategy: strategy.to_string(),
                prompts: samples.len(),
                committed_tokens: run.committed_tokens,
                decode_forwards: run.decode_forwards,
                mat: run.committed_tokens as f64 / run.decode_forwards.max(1) as f64,
                wall_seconds: wall,
                tokens_per_second: tps,
                speedup: if matches!(strategy, Strategy::Ar) {
                    1.0
                } else {
                    tps / base
                },
                exact_match: exact_match(&samples, &run.outputs),
                output_digest: digest(&run.outputs),
            });
        }
    }
    Ok(records)
}

/// Fixed-width table with one row per record.
pub fn format_table(records: &[BenchRecord]) -> String {
    let mut out = String::new();
    let w = records.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
    let _ = writeln!(
        out,
        "{:<w$} {:<10} {:<14} {:>7} {:>8} {:>6} {:>9} {:>8} {:>6}",
        "model", "task", "strategy", "prompts", "tokens", "MAT", "tok/s", "speedup", "EM"
    );
    for r in records {
        let _ = writeln!(
            out,
            "{:<w$} {:<10} {:<14} {:>7} {:>8} {:>6.2} {:>9.1} {:>7.2}x {:>6.3}",
            r.model,
            r.task,
            r.strategy,
            r.prompts,
            r.committed_tokens,
            r.mat,
            r.tokens_per_second,
            r.speedup,
            r.exact_match
        );
    }
    out
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use msn_core::data::{copy_sample, reverse_sample};
    use msn_core::model::{init_model, ModelConfig};

    fn setup() -> (TransformerWeights, Corpus) {
        let w = init_model(&ModelConfig {
            n_layers: 1,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            max_positions: 48,
            seed: 4,
            ..ModelConfig::default()
        })
        .unwrap();
        let suite = Corpus {
            name: "mini".into(),
            source: "test".into(),
            samples: vec![copy_sample("abc"), reverse_sample("xyz"), copy_sample("hello")],
        };
        (w, suite)
    }

    #[test]
    fn every_pair_once_with_ar_first() {
        let (w, suite) = setup();
        let strategies = vec![
            Strategy::from_name("tr-jacobi", 4, None).unwrap(),
            Strategy::Jacobi { block_len: 4 },
        ];
        let opts = BenchOptions {
            reps: 3,
            max_new: 12,
            seed: 0,
        };
        let recs = run_bench("m", &w, &suite, &strategies, &opts).unwrap();
        let cells: Vec<(&str, &str)> = recs.iter().map(|r| (r.task.as_str(), r.strategy.as_str())).collect();
        assert_eq!(
            cells,
            vec![
                ("copy", "ar"),
                ("copy", "tr-jacobi"),
                ("copy", "jacobi(m=4)"),
                ("reverse", "ar"),
                ("reverse", "tr-jacobi"),
                ("reverse", "jacobi(m=4)"),
            ]
        );
        for r in &recs {
            assert!(r.mat >= 1.0);
            if r.strategy == "ar" {
                assert_eq!(r.speedup, 1.0);
                assert_eq!(r.mat, 1.0);
            }
        }
        // lossless decoding gives every strategy the same outputs
        assert!(recs
            .windows(2)
            .all(|p| p[0].task != p[1].task || p[0].output_digest == p[1].output_digest));
        let again = run_bench("m", &w, &suite, &strategies, &opts).unwrap();
        let digests = |v: &[BenchRecord]| v.iter().map(|r| r.output_digest).collect::<Vec<_>>();
        assert_eq!(digests(&recs), digests(&again));
        assert!(format_table(&recs).lines().count() == recs.len() + 1);
    }

    #[test]
    fn empty_suite_is_rejected() {
        let (w, mut suite) = setup();
        suite.samples.clear();
        assert!(run_bench("m", &w, &suite, &[Strategy::Ar], &BenchOptions::default()).is_err());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn exact_match_truncates_after_eos() {
        let s = copy_sample("ab");
        let mut out = s.response.clone();
        out.extend([1, 2]);
        assert_eq!(exact_match(&[&s], &[out]), 1.0);
        assert_eq!(exact_match(&[&s], &[vec![97]]), 0.0);
    }
}

//! Acceptance checks for the training and decoding stack. Prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.
//!
//! The paired copy + kv_lookup models and the sweep models are trained from
//! scratch. Set `MSN_ACCEPTANCE_CACHE=<dir>` to keep the paired checkpoints
//! between runs.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{ensure, Result};
use msn_cli::bench::{exact_match, measure, split_by_task, BenchOptions};
use msn_cli::checkpoint::Checkpoint;
use msn_cli::config::{run_training, CorpusSpec, TrainConfig};
use msn_cli::sweep::{run_sweep, SweepAxis, SweepModels, SweepSpec};
use msn_core::data::{gen_synthetic, Corpus, SftSample, Task};
use msn_core::decode::{
    build_tree, generate, pld_retrieve, DecodeOptions, DecodeSession, DraftTreeTemplate, RetrievalConfig, Strategy,
    TreeFill,
};
use msn_core::model::{forward, forward_causal, init_model, ModelConfig, TransformerWeights};
use msn_core::msn::{
    denoise_accuracy, msn_loss, ppl_spans, token_losses, train, LocationPolicy, NoiseConfig, NoiseSpan, TrainObjective,
    TrainSchedule,
};
use msn_core::numerics::{grad_check, GradCheckOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NOISE_LEN: usize = 4;
const SUITE_SEED: u64 = 1_000_003;
const SUITE_PER_TASK: usize = 100;
const LOSSLESS_PER_TASK: usize = 50;
const MAX_NEW: usize = 64;
const CRITERIA: usize = 11;

struct Outcome {
    pass: bool,
}

fn outcome(name: &str, result: Result<(bool, String)>) -> Outcome {
    let (pass, detail) = result.unwrap_or_else(|e| (false, format!("error: {e:#}")));
    println!("{} {name:<26} {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { pass }
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results = Vec::new();

    let models = match PairedModels::load_or_train() {
        Ok(m) => Some(m),
        Err(e) => {
            println!("FAIL {:<26} error: {e:#}", "train paired models");
            None
        }
    };
    if let Some(m) = &models {
        let lossless = lossless_suite(&m.msn.weights);
        let progress = match &lossless {
            Ok(r) => Ok(r.progress.clone()),
            Err(e) => Err(anyhow::anyhow!("{e:#}")),
        };
        results.push(outcome("lossless", lossless.map(|r| r.lossless)));
        results.push(outcome("jacobi progress", progress));
    }
    results.push(outcome("tree mask oracle", tree_mask_oracle()));
    results.push(outcome("gradient check", gradient_check()));
    results.push(outcome("zero-noise degeneracy", zero_noise_degeneracy()));
    if let Some(m) = &models {
        results.push(outcome("task preservation", task_preservation(m)));
        results.push(outcome("msn acceleration", msn_acceleration(m)));
        results.push(outcome("tr-jacobi dominance", tr_jacobi_dominance(m)));
    }
    results.push(outcome("noise length sweep", noise_length_sweep()));
    results.push(outcome("ppl placement oracle", ppl_placement_oracle()));
    results.push(outcome("retrieval soundness", retrieval_soundness()));
    if let Some(m) = &models {
        match denoise_gap(m) {
            Ok(detail) => println!("INFO {:<26} {detail}", "denoise accuracy"),
            Err(e) => println!("INFO {:<26} error: {e:#}", "denoise accuracy"),
        }
    }

    let passed = results.iter().filter(|r| r.pass).count();
    println!(
        "{passed} of {CRITERIA} criteria passed in {:.0}s",
        started.elapsed().as_secs_f64()
    );
    if passed == CRITERIA {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- models

/// Copy + kv_lookup training setup shared by the paired runs; only the noise
/// length differs between them.
fn paired_config(noise_len: usize) -> TrainConfig {
    TrainConfig {
        seed: Some(17),
        output: None,
        model: ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            max_positions: 64,
            ..ModelConfig::default()
        },
        noise: NoiseConfig {
            segment_len: noise_len,
            policy: LocationPolicy::Random,
            seed: 0,
        },
        train: TrainSchedule {
            epochs: 6,
            batch_size: 32,
            lr: 2e-3,
            warmup_steps: 100,
            ..TrainSchedule::default()
        },
        corpus: CorpusSpec::synthetic(&[Task::Copy, Task::KvLookup], 16_000, 4, 12, 1),
    }
}

struct PairedModels {
    sft: Checkpoint,
    msn: Checkpoint,
    suite: Corpus,
}

impl PairedModels {
    fn load_or_train() -> Result<Self> {
        Ok(Self {
            sft: cached_training(&paired_config(0))?,
            msn: cached_training(&paired_config(NOISE_LEN))?,
            suite: suite(&[Task::Copy, Task::KvLookup], SUITE_PER_TASK),
        })
    }
}

fn cached_training(cfg: &TrainConfig) -> Result<Checkpoint> {
    let cache = std::env::var_os("MSN_ACCEPTANCE_CACHE").map(PathBuf::from);
    let mut h = DefaultHasher::new();
    toml::to_string(cfg)?.hash(&mut h);
    let path = cache.map(|dir| dir.join(format!("paired-{:016x}.ckpt", h.finish())));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        return Checkpoint::load(p);
    }
    let (ckpt, report) = run_training(cfg, |_| {})?;
    println!(
        "     trained L={} in {} steps, {:.0}s, final epoch loss {:.4}",
        cfg.noise.segment_len,
        report.steps,
        report.wall_seconds,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    if let Some(p) = path {
        ckpt.save(&p)?;
    }
    Ok(ckpt)
}

/// Held-out prompts: the seed differs from every training corpus.
fn suite(tasks: &[Task], per_task: usize) -> Corpus {
    let parts: Vec<Corpus> = tasks
        .iter()
        .map(|&t| gen_synthetic(t, per_task, 4..=12, SUITE_SEED))
        .collect();
    Corpus::concat("suite", &parts)
}

fn bench_opts() -> BenchOptions {
    BenchOptions {
        reps: 1,
        max_new: MAX_NEW,
        seed: 0,
    }
}

fn mat(weights: &TransformerWeights, samples: &[&SftSample], strategy: &Strategy) -> Result<f64> {
    let (run, _) = measure(weights, samples, strategy, &bench_opts())?;
    Ok(run.committed_tokens as f64 / run.decode_forwards.max(1) as f64)
}

fn tr_jacobi() -> Strategy {
    Strategy::TrJacobi {
        template: DraftTreeTemplate::default(),
        retrieval: RetrievalConfig::default(),
    }
}

fn tree() -> Strategy {
    Strategy::Tree(DraftTreeTemplate::default().without_retrieval())
}

// ---------------------------------------------------------------- decoding

struct LosslessReport {
    lossless: (bool, String),
    progress: (bool, String),
}

fn lossless_suite(weights: &TransformerWeights) -> Result<LosslessReport> {
    let started = Instant::now();
    let suite = suite(&Task::ALL, LOSSLESS_PER_TASK);
    let mut strategies: Vec<Strategy> = [1, 4, 8].iter().map(|&m| Strategy::Jacobi { block_len: m }).collect();
    strategies.push(tree());
    strategies.push(tr_jacobi());
    let opts = DecodeOptions {
        max_new: MAX_NEW,
        seed: 0,
    };
    let (mut mismatches, mut runs, mut violations, mut forwards) = (0, 0, 0, 0);
    for s in &suite.samples {
        let reference = generate(weights, &s.prompt, &Strategy::Ar, opts)?;
        for strategy in &strategies {
            let g = generate(weights, &s.prompt, strategy, opts)?;
            runs += 1;
            forwards += g.trace.len();
            if g.tokens != reference.tokens {
                mismatches += 1;
            }
            violations += g.trace.iter().filter(|&&c| c == 0).count();
            if let Strategy::Jacobi { block_len: m } = strategy {
                violations += block_violations(&g.trace, *m);
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Ok(LosslessReport {
        lossless: (
            mismatches == 0 && secs < 300.0,
            format!(
                "{mismatches} mismatches over {runs} generations ({} prompts x {} strategies), {secs:.0}s",
                suite.len(),
                strategies.len()
            ),
        ),
        progress: (
            violations == 0,
            format!("{violations} violations over {forwards} decode forwards"),
        ),
    })
}

/// Windows of the trace that needed more than `m` forwards for `m` tokens.
fn block_violations(trace: &[usize], m: usize) -> usize {
    (0..trace.len())
        .filter(|&start| {
            let mut got = 0;
            let mut used = 0;
            for &c in &trace[start..] {
                if got >= m {
                    break;
                }
                got += c;
                used += 1;
            }
            used > m
        })
        .count()
}

fn random_model(rng: &mut ChaCha8Rng) -> Result<TransformerWeights> {
    let d_model = [16, 32][rng.random_range(0..2)];
    Ok(init_model(&ModelConfig {
        vocab_size: 40,
        n_layers: rng.random_range(1..=2),
        n_heads: 2,
        d_model,
        d_ff: 2 * d_model,
        max_positions: 64,
        seed: rng.random(),
    })?)
}

fn random_template(rng: &mut ChaCha8Rng) -> Result<DraftTreeTemplate> {
    let n = rng.random_range(1..=24);
    let mut spec: Vec<(Option<usize>, bool)> = vec![(None, false)];
    for i in 1..n {
        let parent = if rng.random_bool(0.25) {
            None
        } else {
            Some(rng.random_range(0..i))
        };
        spec.push((parent, false));
    }
    if rng.random_bool(0.5) {
        let first = spec.len();
        for j in 0..rng.random_range(1..=5) {
            spec.push((if j == 0 { None } else { Some(first + j - 1) }, true));
        }
    }
    Ok(DraftTreeTemplate::from_parents(&spec)?)
}

fn tree_mask_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f32;
    let mut nodes = 0;
    for _ in 0..100 {
        let w = random_model(&mut rng)?;
        let template = random_template(&mut rng)?;
        let prefix: Vec<u32> = (0..rng.random_range(1..=12)).map(|_| rng.random_range(0..40)).collect();
        let session = DecodeSession::start(&w, &prefix, DecodeOptions::default())?;
        let mut noise = ChaCha8Rng::seed_from_u64(rng.random());
        let state = build_tree(
            &template,
            session.anchor(),
            session.anchor_position(),
            TreeFill::default(),
            || noise.random_range(0..40),
        );
        let out = forward(&w, &state.tokens, &state.positions, &state.mask, Some(session.cache()))?;
        for node in 0..template.len() {
            let mut path = vec![node];
            while let Some(p) = template.nodes()[*path.last().unwrap()].parent {
                path.push(p);
            }
            let mut seq = prefix.clone();
            seq.extend(path.iter().rev().map(|&a| state.tokens[a + 1]));
            let reference = forward_causal(&w, &seq)?;
            let diff = reference
                .gather_rows(&[seq.len() - 1])
                .max_abs_diff(&out.logits.gather_rows(&[node + 1]));
            worst = worst.max(diff);
            nodes += 1;
        }
    }
    Ok((
        worst < 1e-4,
        format!("max abs logit diff {worst:.2e} over {nodes} nodes"),
    ))
}

fn retrieval_soundness() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut violations, mut drafts) = (0, 0);
    for _ in 0..10_000 {
        let alphabet = rng.random_range(1..=8);
        let len: usize = rng.random_range(0..=40);
        let ctx: Vec<u32> = (0..len).map(|_| rng.random_range(0..alphabet)).collect();
        let max_ngram = rng.random_range(1..=4);
        let path_len = rng.random_range(0..=6);
        if let Some(draft) = pld_retrieve(&ctx, max_ngram, path_len) {
            drafts += 1;
            let anchored = !draft.is_empty()
                && draft.len() <= path_len
                && (1..=max_ngram.min(len.saturating_sub(1)))
                    .any(|n| (0..len - n).any(|i| ctx[i..i + n] == ctx[len - n..] && ctx[i + n..].starts_with(&draft)));
            violations += usize::from(!anchored);
        }
    }
    Ok((
        violations == 0,
        format!("{violations} violations over 10000 contexts ({drafts} drafts)"),
    ))
}

// ---------------------------------------------------------------- training

fn tiny_config(layers: usize, d_model: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: layers,
        n_heads: 2,
        d_model,
        d_ff: 2 * d_model,
        max_positions: 64,
        seed,
        ..ModelConfig::default()
    }
}

fn mixed_corpus(n: usize, seed: u64) -> Corpus {
    let parts: Vec<Corpus> = [Task::Copy, Task::Reverse, Task::KvLookup]
        .iter()
        .map(|&t| gen_synthetic(t, n, 2..=10, seed))
        .collect();
    Corpus::concat("mixed", &parts)
}

fn gradient_check() -> Result<(bool, String)> {
    let corpus = mixed_corpus(2, 3);
    let noise = NoiseConfig {
        segment_len: 2,
        ..NoiseConfig::default()
    };
    let w = init_model(&tiny_config(1, 16, 5))?;
    let analytic = msn_loss(&w, &corpus.samples, &noise, 1)?.grads.flatten();
    let mut params = w.flatten();
    let mut probe = w.clone();
    let report = grad_check(
        |p| {
            probe.load_flat(p).expect("same shapes");
            msn_loss(&probe, &corpus.samples, &noise, 1).expect("finite loss").loss
        },
        &mut params,
        &analytic,
        &GradCheckOptions {
            epsilon: 1e-3,
            samples: 200,
            ..GradCheckOptions::default()
        },
    )?;
    Ok((
        report.checked >= 100 && report.max_rel_error < 1e-2,
        format!(
            "max relative error {:.2e} over {} coordinates",
            report.max_rel_error, report.checked
        ),
    ))
}

fn zero_noise_degeneracy() -> Result<(bool, String)> {
    let corpus = mixed_corpus(40, 12);
    let schedule = TrainSchedule {
        epochs: 2,
        batch_size: 8,
        warmup_steps: 3,
        seed: 6,
        ..TrainSchedule::default()
    };
    let run = |objective: TrainObjective| -> Result<Vec<u64>> {
        let mut w = init_model(&tiny_config(1, 32, 8))?;
        let report = train(&mut w, &corpus, &objective, &schedule, |_| {})?;
        Ok(report.step_losses.iter().map(|l| l.to_bits()).collect())
    };
    let sft = run(TrainObjective::Sft)?;
    let mut identical = true;
    for policy in [LocationPolicy::Random, LocationPolicy::Ppl] {
        let msn = run(TrainObjective::Msn(NoiseConfig {
            segment_len: 0,
            policy,
            seed: 1,
        }))?;
        identical &= msn == sft;
    }
    Ok((
        identical,
        format!(
            "{} steps, traces {}",
            sft.len(),
            if identical { "bit-identical" } else { "differ" }
        ),
    ))
}

fn ppl_placement_oracle() -> Result<(bool, String)> {
    let mut w = init_model(&tiny_config(1, 32, 5))?;
    let schedule = TrainSchedule {
        epochs: 1,
        batch_size: 16,
        lr: 3e-3,
        warmup_steps: 5,
        ..TrainSchedule::default()
    };
    train(&mut w, &mixed_corpus(200, 1), &TrainObjective::Sft, &schedule, |_| {})?;
    let pool = mixed_corpus(60, 99);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..100 {
        let s = &pool.samples[rng.random_range(0..pool.len())];
        let len = rng.random_range(1..=6);
        let got = ppl_spans(&w, &[s], len)?[0];
        if got != exhaustive_span(&w, s, len)? {
            mismatches += 1;
        }
    }
    Ok((mismatches == 0, format!("{mismatches} mismatches over 100 samples")))
}

/// Lowest-loss response window by brute force, earliest start on ties.
fn exhaustive_span(w: &TransformerWeights, s: &SftSample, len: usize) -> Result<NoiseSpan> {
    let seq = s.sequence();
    let logits = forward_causal(w, &seq)?;
    let targets: Vec<i32> = (0..seq.len())
        .map(|t| {
            if t + 1 >= s.prompt.len() && t + 1 < seq.len() {
                seq[t + 1] as i32
            } else {
                -1
            }
        })
        .collect();
    let all = token_losses(&logits, &targets);
    let losses = &all[s.prompt.len() - 1..s.prompt.len() - 1 + s.response.len()];
    let len = len.min(losses.len());
    let mut best = (f64::INFINITY, 0);
    for start in 0..=losses.len() - len {
        let sum: f64 = losses[start..start + len].iter().sum();
        if sum < best.0 {
            best = (sum, start);
        }
    }
    Ok(NoiseSpan { start: best.1, len })
}

// ---------------------------------------------------------------- paired models

fn task_preservation(m: &PairedModels) -> Result<(bool, String)> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (task, samples) in split_by_task(&m.suite) {
        let em = |w: &TransformerWeights| -> Result<f64> {
            let (run, _) = measure(w, &samples, &Strategy::Ar, &bench_opts())?;
            Ok(exact_match(&samples, &run.outputs))
        };
        let (sft, msn) = (em(&m.sft.weights)?, em(&m.msn.weights)?);
        pass &= sft >= 0.95 && msn >= 0.95 && (sft - msn).abs() <= 0.05;
        parts.push(format!("{task}: EM L=0 {sft:.3}, L={NOISE_LEN} {msn:.3}"));
    }
    Ok((pass, parts.join("; ")))
}

fn msn_acceleration(m: &PairedModels) -> Result<(bool, String)> {
    let samples: Vec<&SftSample> = m.suite.samples.iter().collect();
    let jacobi = Strategy::Jacobi { block_len: NOISE_LEN };
    let sft = mat(&m.sft.weights, &samples, &jacobi)?;
    let msn = mat(&m.msn.weights, &samples, &jacobi)?;
    Ok((
        msn >= 1.2 * sft,
        format!(
            "jacobi m={NOISE_LEN} MAT: L=0 {sft:.3}, L={NOISE_LEN} {msn:.3} (ratio {:.2})",
            msn / sft
        ),
    ))
}

fn tr_jacobi_dominance(m: &PairedModels) -> Result<(bool, String)> {
    let w = &m.msn.weights;
    let mut pass = true;
    let mut parts = Vec::new();
    for (task, samples) in split_by_task(&m.suite) {
        let ar = mat(w, &samples, &Strategy::Ar)?;
        let jacobi = mat(w, &samples, &Strategy::Jacobi { block_len: NOISE_LEN })?;
        let tr = mat(w, &samples, &tr_jacobi())?;
        pass &= tr >= jacobi && jacobi >= ar && ar == 1.0;
        let mut part = format!("{task}: ar {ar:.2} jacobi {jacobi:.3} tr-jacobi {tr:.3}");
        if task == Task::Copy.name() {
            let no_retrieval = mat(w, &samples, &tree())?;
            pass &= tr >= no_retrieval;
            part.push_str(&format!(" tree {no_retrieval:.3}"));
        }
        parts.push(part);
    }
    Ok((pass, parts.join("; ")))
}

fn denoise_gap(m: &PairedModels) -> Result<String> {
    let sft = denoise_accuracy(&m.sft.weights, &m.suite, NOISE_LEN, 5)?;
    let msn = denoise_accuracy(&m.msn.weights, &m.suite, NOISE_LEN, 5)?;
    Ok(format!("L=0 {sft:.3}, L={NOISE_LEN} {msn:.3}"))
}

// ---------------------------------------------------------------- sweep

fn noise_length_sweep() -> Result<(bool, String)> {
    let base = TrainConfig {
        seed: Some(23),
        output: None,
        model: ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            max_positions: 64,
            ..ModelConfig::default()
        },
        noise: NoiseConfig::default(),
        train: TrainSchedule {
            epochs: 4,
            batch_size: 32,
            lr: 2e-3,
            warmup_steps: 100,
            ..TrainSchedule::default()
        },
        corpus: CorpusSpec::synthetic(&[Task::Copy], 8_000, 4, 12, 2),
    };
    let spec = SweepSpec {
        axis: SweepAxis::TrainNoiseLen,
        values: vec![1, 4, 8],
    };
    let rows = run_sweep(
        &spec,
        SweepModels::Train {
            base: &base,
            save_dir: None,
        },
        &suite(&[Task::Copy], SUITE_PER_TASK),
        &DraftTreeTemplate::default(),
        &bench_opts(),
        |_| {},
    )?;
    ensure!(rows.iter().all(|r| r.task == Task::Copy.name()), "unexpected task rows");
    let mat_of = |l: usize| rows.iter().find(|r| r.value == l).map(|r| r.mat);
    let (l1, l4) = (mat_of(1), mat_of(4));
    let pass = rows.len() == 3 && matches!((l1, l4), (Some(a), Some(b)) if a <= b);
    let summary: Vec<String> = rows
        .iter()
        .map(|r| format!("L={} MAT {:.3} EM {:.2}", r.value, r.mat, r.exact_match))
        .collect();
    Ok((pass, format!("{} rows: {}", rows.len(), summary.join(", "))))
}

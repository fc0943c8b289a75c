use std::f64::consts::PI;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, SftSample};
use crate::error::{Error, Result};
use crate::model::{forward_packed, greedy_next, PackedBatch, TransformerWeights};
use crate::msn::loss::{loss_and_grad, prepare, TrainObjective};
use crate::msn::noise::{apply_noise, choose_span_random, sample_rng};
use crate::numerics::{adam_update, AdamState};

/// Optimizer and data-order settings. The learning rate warms up linearly
/// and then follows a cosine down to `lr * min_lr_ratio`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub warmup_steps: usize,
    pub min_lr_ratio: f32,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f32,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            warmup_steps: 50,
            min_lr_ratio: 0.1,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn steps_per_epoch(&self, corpus_len: usize) -> usize {
        corpus_len.div_ceil(self.batch_size.max(1))
    }

    pub fn lr_at(&self, step: usize, total_steps: usize) -> f32 {
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        };
        let progress = step as f64 / total_steps.max(1) as f64;
        let floor = self.min_lr_ratio as f64;
        let cosine = floor + (1.0 - floor) * 0.5 * (1.0 + (PI * progress).cos());
        (self.lr as f64 * warm * cosine) as f32
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub step_losses: Vec<f64>,
    /// Token-weighted mean loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub wall_seconds: f64,
}

/// Fine-tunes `weights` in place on `corpus` with Adam. Aborts with
/// [`Error::Divergence`] on a non-finite loss.
pub fn train(
    weights: &mut TransformerWeights,
    corpus: &Corpus,
    objective: &TrainObjective,
    schedule: &TrainSchedule,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainReport> {
    let started = Instant::now();
    if corpus.samples.is_empty() {
        return Err(Error::EmptyCorpus(corpus.name.clone()));
    }
    if schedule.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let max = weights.config.max_positions;
    if let Some(i) = corpus.samples.iter().position(|s| !s.fits(max)) {
        return Err(Error::Config(format!(
            "sample {i} of `{}` does not fit in {max} positions",
            corpus.name
        )));
    }
    let total = schedule.epochs * schedule.steps_per_epoch(corpus.samples.len());
    let mut grads = TransformerWeights::zeros(&weights.config);
    let mut states: Vec<AdamState> = weights
        .named_tensors()
        .iter()
        .map(|(_, m)| AdamState::with_lr(m.rows(), m.cols(), schedule.lr))
        .collect();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..corpus.samples.len()).collect();
    let mut step = 0;
    for epoch in 0..schedule.epochs {
        let mut shuffle = ChaCha8Rng::seed_from_u64(schedule.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut shuffle);
        let (mut epoch_sum, mut epoch_count) = (0.0, 0usize);
        for ids in order.chunks(schedule.batch_size) {
            let samples: Vec<&SftSample> = ids.iter().map(|&i| &corpus.samples[i]).collect();
            let seqs = prepare(weights, &samples, ids, step, objective)?;
            grads.zero();
            let batch = loss_and_grad(weights, &seqs, Some(&mut grads))?;
            if !batch.loss.is_finite() {
                return Err(Error::Divergence { step, loss: batch.loss });
            }
            clip_grad_norm(&mut grads, schedule.grad_clip);
            let lr = schedule.lr_at(step, total);
            let grad_tensors: Vec<_> = grads.named_tensors().into_iter().map(|(_, m)| m).collect();
            for ((value, grad), state) in weights.tensors_mut().into_iter().zip(grad_tensors).zip(&mut states) {
                state.lr = lr;
                adam_update(value, grad, state)?;
            }
            on_step(&StepLog {
                step,
                epoch,
                loss: batch.loss,
                lr,
            });
            report.step_losses.push(batch.loss);
            epoch_sum += batch.loss * batch.count as f64;
            epoch_count += batch.count;
            step += 1;
        }
        report.epoch_losses.push(if epoch_count == 0 {
            0.0
        } else {
            epoch_sum / epoch_count as f64
        });
    }
    report.steps = step;
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

fn clip_grad_norm(grads: &mut TransformerWeights, max_norm: f32) {
    if max_norm <= 0.0 {
        return;
    }
    let sq: f64 = grads
        .named_tensors()
        .iter()
        .flat_map(|(_, m)| m.data().iter())
        .map(|&g| g as f64 * g as f64)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm as f64 {
        let scale = (max_norm as f64 / norm) as f32;
        for m in grads.tensors_mut() {
            m.scale(scale);
        }
    }
}

/// Fraction of corrupted positions whose greedy prediction is the clean next
/// token. Each sample gets a random `segment_len` span of ahead noise; a span
/// covering response indices `i..=j` is scored on targets `i+1..=j+1` that
/// exist.
pub fn denoise_accuracy(weights: &TransformerWeights, corpus: &Corpus, segment_len: usize, seed: u64) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    let ids: Vec<usize> = (0..corpus.samples.len()).collect();
    for chunk in ids.chunks(32) {
        let noisy: Vec<_> = chunk
            .iter()
            .map(|&i| {
                let s = &corpus.samples[i];
                let mut rng = sample_rng(seed, i, 0);
                let span = choose_span_random(s.response.len(), segment_len, &mut rng);
                apply_noise(s, span, weights.config.vocab_size, &mut rng)
            })
            .collect();
        let batch = PackedBatch::new(noisy.iter().map(|n| n.input.as_slice()));
        let (logits, _) = forward_packed(weights, &batch, false)?;
        for ((&i, n), seg) in chunk.iter().zip(&noisy).zip(&batch.segments) {
            let s = &corpus.samples[i];
            let p = s.prompt.len();
            for t in n.span.start + 1..=n.span.end() {
                if t >= s.response.len() {
                    break;
                }
                let row = logits.row(seg.start + p - 1 + t);
                hits += usize::from(greedy_next(row) == s.response[t]);
                total += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

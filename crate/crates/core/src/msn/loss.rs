use crate::data::{SftSample, TokenSequence};
use crate::error::Result;
use crate::model::{backward, forward_packed, PackedBatch, TransformerWeights};
use crate::msn::noise::{apply_noise, choose_span_ppl, choose_span_random, clean_targets, sample_rng};
use crate::msn::{LocationPolicy, NoiseConfig, NoiseSpan};
use crate::numerics::{cross_entropy_scaled, Matrix, IGNORE_INDEX};

/// What a training step optimizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrainObjective {
    /// Plain next-token loss on clean responses.
    Sft,
    /// Next-token loss on clean targets with part of each response input
    /// replaced by ahead noise.
    Msn(NoiseConfig),
}

/// One packed sequence ready for the loss: model input and next-token targets.
pub(crate) struct TrainSeq {
    pub input: Vec<u32>,
    pub targets: Vec<i32>,
}

/// Mean and token count of a batch loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub count: usize,
}

/// Per-row cross-entropy in f64 (0 for ignored rows).
pub fn token_losses(logits: &Matrix, targets: &[i32]) -> Vec<f64> {
    targets
        .iter()
        .enumerate()
        .map(|(r, &t)| {
            if t == IGNORE_INDEX {
                return 0.0;
            }
            let row = logits.row(r);
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
            let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
            lse - row[t as usize] as f64
        })
        .collect()
}

/// Builds the step's training sequences. `ids` are the samples' corpus
/// indices, which together with `step` seed each sample's noise.
pub(crate) fn prepare(
    weights: &TransformerWeights,
    samples: &[&SftSample],
    ids: &[usize],
    step: usize,
    objective: &TrainObjective,
) -> Result<Vec<TrainSeq>> {
    let clean: Vec<TrainSeq> = samples
        .iter()
        .map(|s| {
            let input = s.sequence();
            TrainSeq {
                targets: clean_targets(&input, s.prompt.len()),
                input,
            }
        })
        .collect();
    let noise = match objective {
        TrainObjective::Msn(n) if n.segment_len > 0 => n,
        _ => return Ok(clean),
    };
    let ppl = if noise.policy == LocationPolicy::Ppl {
        Some(ppl_spans(weights, samples, noise.segment_len)?)
    } else {
        None
    };
    let vocab = weights.config.vocab_size;
    Ok(samples
        .iter()
        .enumerate()
        .map(|(b, s)| {
            let mut rng = sample_rng(noise.seed, ids[b], step);
            let span = match &ppl {
                Some(spans) => spans[b],
                None => choose_span_random(s.response.len(), noise.segment_len, &mut rng),
            };
            let n = apply_noise(s, span, vocab, &mut rng);
            TrainSeq {
                input: n.input,
                targets: n.targets,
            }
        })
        .collect())
}

/// The lowest-loss span of each sample, scored by one clean teacher-forced
/// forward over the whole batch.
pub fn ppl_spans(weights: &TransformerWeights, samples: &[&SftSample], segment_len: usize) -> Result<Vec<NoiseSpan>> {
    let seqs: Vec<TokenSequence> = samples.iter().map(|s| s.sequence()).collect();
    let batch = PackedBatch::new(seqs.iter().map(Vec::as_slice));
    let (logits, _) = forward_packed(weights, &batch, false)?;
    let targets: Vec<i32> = samples
        .iter()
        .zip(&seqs)
        .flat_map(|(s, q)| clean_targets(q, s.prompt.len()))
        .collect();
    let losses = token_losses(&logits, &targets);
    Ok(samples
        .iter()
        .zip(&batch.segments)
        .map(|(s, seg)| {
            // response token i is predicted by row prompt_len - 1 + i
            let from = seg.start + s.prompt.len() - 1;
            choose_span_ppl(&losses[from..from + s.response.len()], segment_len)
        })
        .collect())
}

/// Mean token loss over the batch; with `grads`, also accumulates its
/// gradient.
pub(crate) fn loss_and_grad(
    weights: &TransformerWeights,
    seqs: &[TrainSeq],
    grads: Option<&mut TransformerWeights>,
) -> Result<BatchLoss> {
    let targets: Vec<i32> = seqs.iter().flat_map(|s| s.targets.iter().copied()).collect();
    let count = targets.iter().filter(|&&t| t != IGNORE_INDEX).count();
    if count == 0 {
        return Ok(BatchLoss { loss: 0.0, count });
    }
    let batch = PackedBatch::new(seqs.iter().map(|s| s.input.as_slice()));
    let (logits, tape) = forward_packed(weights, &batch, grads.is_some())?;
    let ce = cross_entropy_scaled(&logits, &targets, 1.0 / count as f32)?;
    if let (Some(g), Some(tape)) = (grads, tape) {
        backward(weights, &tape, &ce.grad, g);
    }
    Ok(BatchLoss { loss: ce.loss, count })
}

/// Batch loss and its gradient with respect to every weight.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub count: usize,
    pub grads: TransformerWeights,
}

/// Clean next-token loss on the responses of `samples`.
pub fn sft_loss(weights: &TransformerWeights, samples: &[SftSample]) -> Result<LossGrad> {
    objective_loss(weights, samples, &TrainObjective::Sft, 0)
}

/// Loss on clean targets with each sample's noise drawn as at training
/// `step`; sample `i` of the slice uses noise stream `i`.
pub fn msn_loss(
    weights: &TransformerWeights,
    samples: &[SftSample],
    noise: &NoiseConfig,
    step: usize,
) -> Result<LossGrad> {
    objective_loss(weights, samples, &TrainObjective::Msn(noise.clone()), step)
}

fn objective_loss(
    weights: &TransformerWeights,
    samples: &[SftSample],
    objective: &TrainObjective,
    step: usize,
) -> Result<LossGrad> {
    let refs: Vec<&SftSample> = samples.iter().collect();
    let ids: Vec<usize> = (0..samples.len()).collect();
    let seqs = prepare(weights, &refs, &ids, step, objective)?;
    let mut grads = TransformerWeights::zeros(&weights.config);
    let BatchLoss { loss, count } = loss_and_grad(weights, &seqs, Some(&mut grads))?;
    Ok(LossGrad { loss, count, grads })
}

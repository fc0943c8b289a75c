use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::EOS;
use crate::decode::{compute_metrics, DecodeMetrics};
use crate::error::{Error, Result};
use crate::model::{causal_mask, forward, KvCache, KvDelta, TransformerWeights};

/// Budget and noise seed shared by every decoding strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    pub max_new: usize,
    pub seed: u64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { max_new: 64, seed: 0 }
    }
}

/// Output of one generation. `tokens` holds only the generated part and ends
/// at the first EOS if one was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub metrics: DecodeMetrics,
    /// Tokens committed by each decode forward.
    pub trace: Vec<usize>,
}

/// Incremental decoding state. The last committed token (the anchor) is never
/// cached: every decode forward feeds it first, followed by any drafts, so the
/// cache always holds exactly `committed().len() - 1` positions.
pub struct DecodeSession<'w> {
    weights: &'w TransformerWeights,
    cache: KvCache,
    tokens: Vec<u32>,
    prompt_len: usize,
    max_new: usize,
    trace: Vec<usize>,
    finished: bool,
    prefill_forwards: usize,
    rng: ChaCha8Rng,
    started: Instant,
}

impl<'w> DecodeSession<'w> {
    /// Prefills the cache with every prompt token but the last.
    pub fn start(weights: &'w TransformerWeights, prompt: &[u32], opts: DecodeOptions) -> Result<Self> {
        let started = Instant::now();
        let max = weights.config.max_positions;
        if prompt.is_empty() {
            return Err(Error::Config("empty prompt".into()));
        }
        if prompt.len() > max {
            return Err(Error::PositionOverflow {
                position: prompt.len() - 1,
                max,
            });
        }
        let mut cache = KvCache::new(weights.layers.len(), weights.config.d_model);
        let head = &prompt[..prompt.len() - 1];
        let mut prefill_forwards = 0;
        if !head.is_empty() {
            let positions: Vec<usize> = (0..head.len()).collect();
            let out = forward(weights, head, &positions, &causal_mask(head.len(), 0), None)?;
            cache.commit_all(&out.kv)?;
            prefill_forwards = 1;
        }
        Ok(Self {
            weights,
            cache,
            tokens: prompt.to_vec(),
            prompt_len: prompt.len(),
            max_new: opts.max_new,
            trace: Vec::new(),
            finished: opts.max_new == 0,
            prefill_forwards,
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            started,
        })
    }

    pub fn weights(&self) -> &'w TransformerWeights {
        self.weights
    }

    pub fn cache(&self) -> &KvCache {
        &self.cache
    }

    /// Prompt followed by everything generated so far.
    pub fn committed(&self) -> &[u32] {
        &self.tokens
    }

    pub fn generated(&self) -> &[u32] {
        &self.tokens[self.prompt_len..]
    }

    pub fn anchor(&self) -> u32 {
        *self.tokens.last().expect("prompt is non-empty")
    }

    /// Position of the anchor, equal to the cache length.
    pub fn anchor_position(&self) -> usize {
        self.cache.len()
    }

    /// Draft slots available after the anchor before positions run out.
    pub fn room(&self) -> usize {
        self.weights
            .config
            .max_positions
            .saturating_sub(self.anchor_position() + 1)
    }

    /// True once EOS was committed, the budget is spent or the anchor no
    /// longer has a position.
    pub fn is_done(&self) -> bool {
        self.finished || self.anchor_position() >= self.weights.config.max_positions
    }

    pub fn trace(&self) -> &[usize] {
        &self.trace
    }

    /// A token drawn uniformly from the committed sequence.
    pub fn ahead_noise(&mut self) -> u32 {
        self.tokens[self.rng.random_range(0..self.tokens.len())]
    }

    /// Records one decode forward: appends `kv_rows` of `delta` to the cache
    /// and `tokens` to the output, stopping after EOS or at the budget.
    /// Returns the number of tokens actually committed.
    pub(crate) fn commit(&mut self, delta: &KvDelta, kv_rows: &[usize], tokens: &[u32]) -> Result<usize> {
        debug_assert_eq!(kv_rows.len(), tokens.len());
        let budget = self.max_new - self.generated().len();
        let mut n = tokens.len().min(budget);
        if let Some(i) = tokens[..n].iter().position(|&t| t == EOS) {
            n = i + 1;
            self.finished = true;
        }
        self.cache.commit(delta, &kv_rows[..n])?;
        self.tokens.extend_from_slice(&tokens[..n]);
        if self.generated().len() >= self.max_new {
            self.finished = true;
        }
        self.trace.push(n);
        Ok(n)
    }

    pub fn finish(self) -> Result<Generation> {
        let wall = self.started.elapsed().as_secs_f64();
        // a zero budget finishes before any decode forward
        let mut metrics = if self.trace.is_empty() {
            DecodeMetrics {
                committed_tokens: 0,
                decode_forwards: 0,
                prefill_forwards: 0,
                mat: 0.0,
                wall_seconds: wall,
                tokens_per_second: 0.0,
            }
        } else {
            compute_metrics(&self.trace, wall)?
        };
        metrics.prefill_forwards = self.prefill_forwards;
        Ok(Generation {
            tokens: self.tokens[self.prompt_len..].to_vec(),
            metrics,
            trace: self.trace,
        })
    }
}

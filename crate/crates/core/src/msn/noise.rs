use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SftSample;
use crate::error::{Error, Result};
use crate::numerics::IGNORE_INDEX;

/// Where the noisy segment goes inside a response.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationPolicy {
    /// Uniformly random start.
    #[default]
    Random,
    /// The window with the highest summed token loss under the current model.
    Ppl,
}

impl fmt::Display for LocationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LocationPolicy::Random => "random",
            LocationPolicy::Ppl => "ppl",
        })
    }
}

impl FromStr for LocationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(LocationPolicy::Random),
            "ppl" => Ok(LocationPolicy::Ppl),
            other => Err(Error::Config(format!(
                "unknown noise policy `{other}` (expected random or ppl)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Tokens replaced per sample; 0 disables noise.
    pub segment_len: usize,
    pub policy: LocationPolicy,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            segment_len: 4,
            policy: LocationPolicy::Random,
            seed: 0,
        }
    }
}

/// Half-open range of response indices to corrupt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseSpan {
    pub start: usize,
    pub len: usize,
}

impl NoiseSpan {
    pub const EMPTY: NoiseSpan = NoiseSpan { start: 0, len: 0 };

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end()).contains(&i)
    }
}

/// A training sequence with part of its response replaced.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisySample {
    /// Prompt followed by the (partly noised) response.
    pub input: Vec<u32>,
    /// Clean next-token targets: `targets[t]` is the original token at
    /// `t + 1` for every position predicting a response token, otherwise
    /// ignored.
    pub targets: Vec<i32>,
    pub span: NoiseSpan,
}

/// A token from `context`, uniformly; uniform over `vocab_size` when the
/// context is empty.
pub fn sample_ahead_noise(context: &[u32], vocab_size: usize, rng: &mut impl Rng) -> u32 {
    if context.is_empty() {
        rng.random_range(0..vocab_size as u32)
    } else {
        context[rng.random_range(0..context.len())]
    }
}

/// Random start with `min(segment_len, response_len)` tokens.
pub fn choose_span_random(response_len: usize, segment_len: usize, rng: &mut impl Rng) -> NoiseSpan {
    let len = segment_len.min(response_len);
    if len == 0 {
        return NoiseSpan::EMPTY;
    }
    NoiseSpan {
        start: rng.random_range(0..=response_len - len),
        len,
    }
}

/// The window whose summed per-token loss is smallest, earliest on ties:
/// tokens the model already predicts confidently are the cheapest to corrupt.
/// `losses[i]` is the loss of response token `i`. Each window sum is
/// computed from scratch so equal windows compare exactly equal.
pub fn choose_span_ppl(losses: &[f64], segment_len: usize) -> NoiseSpan {
    let len = segment_len.min(losses.len());
    if len == 0 {
        return NoiseSpan::EMPTY;
    }
    let mut best = NoiseSpan { start: 0, len };
    let mut best_sum = f64::INFINITY;
    for start in 0..=losses.len() - len {
        let sum: f64 = losses[start..start + len].iter().sum();
        if sum < best_sum {
            best_sum = sum;
            best.start = start;
        }
    }
    best
}

/// Corrupts `span` of the response with ahead noise drawn from the clean
/// tokens before each corrupted position; targets stay clean.
pub fn apply_noise(sample: &SftSample, span: NoiseSpan, vocab_size: usize, rng: &mut impl Rng) -> NoisySample {
    let clean = sample.sequence();
    let p = sample.prompt.len();
    let mut input = clean.clone();
    for i in span.start..span.end() {
        input[p + i] = sample_ahead_noise(&clean[..p + i], vocab_size, rng);
    }
    NoisySample {
        targets: clean_targets(&clean, p),
        input,
        span,
    }
}

/// Next-token targets for the response part of `sequence`.
pub(crate) fn clean_targets(sequence: &[u32], prompt_len: usize) -> Vec<i32> {
    let n = sequence.len();
    (0..n)
        .map(|t| {
            if t + 1 >= prompt_len && t + 1 < n {
                sequence[t + 1] as i32
            } else {
                IGNORE_INDEX
            }
        })
        .collect()
}

/// Independent noise stream for one sample at one training step.
pub(crate) fn sample_rng(seed: u64, sample: usize, step: usize) -> ChaCha8Rng {
    let mut h = seed ^ 0x6A09_E667_F3BC_C908;
    for x in [sample as u64, step as u64] {
        h = (h ^ x).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        h ^= h >> 29;
    }
    ChaCha8Rng::seed_from_u64(h)
}

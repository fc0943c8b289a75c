use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acceptance statistics of one generation. `mat` (mean accepted tokens) is
/// committed tokens per decode forward and counts the bonus token, so plain
/// autoregressive decoding scores exactly 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeMetrics {
    pub committed_tokens: usize,
    /// Forwards after the prompt prefill.
    pub decode_forwards: usize,
    pub prefill_forwards: usize,
    pub mat: f64,
    pub wall_seconds: f64,
    pub tokens_per_second: f64,
}

/// Builds metrics from per-forward commit counts.
pub fn compute_metrics(commits: &[usize], wall_seconds: f64) -> Result<DecodeMetrics> {
    if commits.is_empty() {
        return Err(Error::NoForwards);
    }
    let committed: usize = commits.iter().sum();
    Ok(DecodeMetrics {
        committed_tokens: committed,
        decode_forwards: commits.len(),
        prefill_forwards: 0,
        mat: committed as f64 / commits.len() as f64,
        wall_seconds,
        tokens_per_second: if wall_seconds > 0.0 {
            committed as f64 / wall_seconds
        } else {
            0.0
        },
    })
}

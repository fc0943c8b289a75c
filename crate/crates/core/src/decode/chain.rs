//! Linear drafts: autoregressive, Jacobi and prompt-lookup decoding.

use crate::decode::{DecodeOptions, DecodeSession, Generation};
use crate::error::Result;
use crate::model::{causal_mask, forward, greedy_next, TransformerWeights};

/// Result of verifying one linear draft.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainStep {
    /// Greedy prediction after the anchor and after each draft token.
    pub candidates: Vec<u32>,
    /// Length of the draft prefix that matched the predictions.
    pub accepted: usize,
    /// Tokens committed (matched prefix plus the bonus), after EOS and
    /// budget truncation.
    pub committed: Vec<u32>,
}

/// Feeds the anchor and `draft` causally and commits the longest draft
/// prefix that greedy decoding would itself have produced, plus one bonus
/// token. Drafts longer than the remaining positions are cut.
pub fn verify_chain(session: &mut DecodeSession<'_>, draft: &[u32]) -> Result<ChainStep> {
    let draft = &draft[..draft.len().min(session.room())];
    let start = session.anchor_position();
    let mut input = Vec::with_capacity(draft.len() + 1);
    input.push(session.anchor());
    input.extend_from_slice(draft);
    let positions: Vec<usize> = (start..start + input.len()).collect();
    let mask = causal_mask(input.len(), start);
    let out = forward(session.weights(), &input, &positions, &mask, Some(session.cache()))?;
    let candidates: Vec<u32> = (0..input.len()).map(|r| greedy_next(out.logits.row(r))).collect();
    let accepted = draft.iter().zip(&candidates).take_while(|(g, c)| g == c).count();
    let rows: Vec<usize> = (0..=accepted).collect();
    let n = session.commit(&out.kv, &rows, &candidates[..=accepted])?;
    Ok(ChainStep {
        committed: candidates[..n].to_vec(),
        candidates,
        accepted,
    })
}

pub fn ar_generate(weights: &TransformerWeights, prompt: &[u32], opts: DecodeOptions) -> Result<Generation> {
    let mut s = DecodeSession::start(weights, prompt, opts)?;
    while !s.is_done() {
        verify_chain(&mut s, &[])?;
    }
    s.finish()
}

/// One Jacobi iteration on a guess block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JacobiStep {
    pub step: ChainStep,
    /// Guess for the next iteration: the unverified predictions that follow
    /// the bonus token, topped up with ahead noise to the block length.
    pub next_guess: Vec<u32>,
}

pub fn jacobi_step(session: &mut DecodeSession<'_>, guess: &[u32]) -> Result<JacobiStep> {
    let step = verify_chain(session, guess)?;
    let mut next_guess: Vec<u32> = step.candidates[step.accepted + 1..].to_vec();
    while next_guess.len() < guess.len() {
        next_guess.push(session.ahead_noise());
    }
    Ok(JacobiStep { step, next_guess })
}

/// Jacobi decoding with a block of `block_len` guesses per forward, seeded
/// with ahead noise. A block length of 0 is plain autoregressive decoding.
pub fn jacobi_generate(
    weights: &TransformerWeights,
    prompt: &[u32],
    block_len: usize,
    opts: DecodeOptions,
) -> Result<Generation> {
    let mut s = DecodeSession::start(weights, prompt, opts)?;
    let mut guess: Vec<u32> = (0..block_len).map(|_| s.ahead_noise()).collect();
    while !s.is_done() {
        guess = jacobi_step(&mut s, &guess)?.next_guess;
    }
    s.finish()
}

/// Retrieval settings for prompt-lookup drafts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RetrievalConfig {
    pub max_ngram: usize,
    pub path_len: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            max_ngram: 3,
            path_len: 5,
        }
    }
}

/// Finds the longest suffix n-gram of `context` (up to `max_ngram`) that also
/// occurs earlier, taking the most recent such occurrence, and returns up to
/// `path_len` tokens that followed it.
pub fn pld_retrieve(context: &[u32], max_ngram: usize, path_len: usize) -> Option<Vec<u32>> {
    if path_len == 0 {
        return None;
    }
    let len = context.len();
    for n in (1..=max_ngram.min(len.saturating_sub(1))).rev() {
        let suffix = &context[len - n..];
        if let Some(i) = (0..len - n).rev().find(|&i| &context[i..i + n] == suffix) {
            let from = i + n;
            return Some(context[from..(from + path_len).min(len)].to_vec());
        }
    }
    None
}

/// Prompt-lookup decoding: each forward verifies a single retrieved chain,
/// or just the anchor when nothing matches.
pub fn pld_generate(
    weights: &TransformerWeights,
    prompt: &[u32],
    retrieval: RetrievalConfig,
    opts: DecodeOptions,
) -> Result<Generation> {
    let mut s = DecodeSession::start(weights, prompt, opts)?;
    while !s.is_done() {
        let draft = pld_retrieve(s.committed(), retrieval.max_ngram, retrieval.path_len).unwrap_or_default();
        verify_chain(&mut s, &draft)?;
    }
    s.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retrieves_after_most_recent_match() {
        // the suffix (1, 2) occurs at 1 and at 5; the later one wins
        let ctx = [9, 1, 2, 7, 8, 1, 2, 3, 4, 1, 2];
        assert_eq!(pld_retrieve(&ctx, 3, 5), Some(vec![3, 4, 1, 2]));
        assert_eq!(pld_retrieve(&ctx, 3, 2), Some(vec![3, 4]));
    }

    #[test]
    fn prefers_longer_ngrams() {
        // bigram (5, 6) matches at 0; unigram 6 alone matches more recently at 4
        let ctx = [5, 6, 1, 2, 6, 3, 5, 6];
        assert_eq!(pld_retrieve(&ctx, 2, 3), Some(vec![1, 2, 6]));
        assert_eq!(pld_retrieve(&ctx, 1, 3), Some(vec![3, 5, 6]));
    }

    #[test]
    fn no_match() {
        assert_eq!(pld_retrieve(&[1, 2, 3], 3, 5), None);
        assert_eq!(pld_retrieve(&[1], 3, 5), None);
        assert_eq!(pld_retrieve(&[], 3, 5), None);
        assert_eq!(pld_retrieve(&[1, 1], 3, 0), None);
    }

    #[test]
    fn overlapping_match() {
        assert_eq!(pld_retrieve(&[4, 4, 4], 3, 5), Some(vec![4]));
    }
}

use crate::data::{Corpus, EOS};
use crate::decode::{generate, DecodeOptions, Strategy};
use crate::error::Result;
use crate::model::TransformerWeights;

/// Fraction of samples whose generated response equals the reference
/// exactly, EOS included. `respond` maps a prompt to generated tokens.
pub fn exact_match_eval_with(corpus: &Corpus, mut respond: impl FnMut(&[u32]) -> Result<Vec<u32>>) -> Result<f64> {
    if corpus.samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for s in &corpus.samples {
        let mut out = respond(&s.prompt)?;
        if let Some(i) = out.iter().position(|&t| t == EOS) {
            out.truncate(i + 1);
        }
        hits += usize::from(out == s.response);
    }
    Ok(hits as f64 / corpus.samples.len() as f64)
}

/// Exact match under `strategy`, generating at most the reference length
/// plus a little slack per sample.
pub fn exact_match_eval(weights: &TransformerWeights, corpus: &Corpus, strategy: &Strategy, seed: u64) -> Result<f64> {
    exact_match_eval_with(corpus, |prompt| {
        let max_new = corpus.samples.iter().map(|s| s.response.len()).max().unwrap_or(1) + 4;
        Ok(generate(weights, prompt, strategy, DecodeOptions { max_new, seed })?.tokens)
    })
}

//! Token-tree verification: many candidate continuations checked in one
//! forward under a tree attention mask.

use std::borrow::Cow;

use crate::decode::{pld_retrieve, DecodeOptions, DecodeSession, DraftTreeTemplate, Generation, RetrievalConfig};
use crate::error::{Error, Result};
use crate::model::{forward, greedy_next, top_k, AttentionMask, TransformerWeights};

/// Forward input for one tree round. Row 0 is the anchor; row `n + 1` is
/// template node `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeState {
    pub tokens: Vec<u32>,
    pub positions: Vec<usize>,
    /// Keys are the `anchor_position` cached positions followed by the rows.
    pub mask: AttentionMask,
}

/// What fills the tree this round.
#[derive(Clone, Copy, Debug, Default)]
pub struct TreeFill<'a> {
    /// Candidate first tokens, one per root. Missing roots take noise.
    pub roots: Option<&'a [u32]>,
    /// Tokens for the main path below its root.
    pub continuation: &'a [u32],
    /// Retrieved draft for the retrieval chain.
    pub retrieval: Option<&'a [u32]>,
}

/// Lays out `anchor` and the template nodes. Node `n` sits at
/// `anchor_position + 1 + depth(n)` and sees the cache, the anchor, its
/// ancestors and itself. Nodes without an assigned token take `noise()`.
pub fn build_tree(
    template: &DraftTreeTemplate,
    anchor: u32,
    anchor_position: usize,
    fill: TreeFill<'_>,
    mut noise: impl FnMut() -> u32,
) -> TreeState {
    let n = template.len();
    let mut slots: Vec<Option<u32>> = vec![None; n];
    for (i, &r) in template.roots().iter().enumerate() {
        slots[r] = fill.roots.and_then(|c| c.get(i).copied());
    }
    for (&node, &t) in template.main_path().iter().skip(1).zip(fill.continuation) {
        slots[node] = Some(t);
    }
    if let Some(draft) = fill.retrieval {
        for (&node, &t) in template.retrieval_path().iter().zip(draft) {
            slots[node] = Some(t);
        }
    }
    let mut tokens = Vec::with_capacity(n + 1);
    tokens.push(anchor);
    tokens.extend(slots.into_iter().map(|s| s.unwrap_or_else(&mut noise)));
    let mut positions = vec![anchor_position];
    positions.extend(template.nodes().iter().map(|nd| anchor_position + 1 + nd.depth));
    let c = anchor_position;
    let mask = AttentionMask::from_fn(n + 1, c + n + 1, |q, k| {
        k <= c || (q > 0 && template.is_ancestor_or_self(k - c - 1, q - 1))
    });
    TreeState {
        tokens,
        positions,
        mask,
    }
}

/// Outcome of verifying one tree.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeStep {
    /// Greedy prediction at every row (anchor first).
    pub verdicts: Vec<u32>,
    /// Per node: its token matches its parent's prediction and every
    /// ancestor was accepted too.
    pub accepted: Vec<bool>,
    /// Index into `template.paths()` of the chosen path.
    pub best_path: usize,
    pub accept_len: usize,
    pub committed: Vec<u32>,
    /// Top-K predictions after the first rejected node of the best path, or
    /// `None` when the whole path was accepted.
    pub next_roots: Option<Vec<u32>>,
    /// Predictions of the best path's nodes after the first rejected one.
    pub continuation: Vec<u32>,
}

/// Runs the tree forward, picks the path with the longest accepted prefix
/// (first in template order on ties) and commits it plus the bonus token.
pub fn tree_verify(
    session: &mut DecodeSession<'_>,
    template: &DraftTreeTemplate,
    state: &TreeState,
) -> Result<TreeStep> {
    let out = forward(
        session.weights(),
        &state.tokens,
        &state.positions,
        &state.mask,
        Some(session.cache()),
    )?;
    let verdicts: Vec<u32> = (0..state.tokens.len())
        .map(|r| greedy_next(out.logits.row(r)))
        .collect();
    let row = |node: Option<usize>| node.map_or(0, |n| n + 1);
    let mut accepted = vec![false; template.len()];
    for (n, node) in template.nodes().iter().enumerate() {
        let parent_ok = node.parent.is_none_or(|p| accepted[p]);
        accepted[n] = parent_ok && state.tokens[n + 1] == verdicts[row(node.parent)];
    }
    let mut best_path = 0;
    let mut accept_len = 0;
    for (i, path) in template.paths().iter().enumerate() {
        let len = path.iter().take_while(|&&n| accepted[n]).count();
        if len > accept_len {
            best_path = i;
            accept_len = len;
        }
    }
    let path: &[usize] = template.paths().get(best_path).map_or(&[], Vec::as_slice);
    let mut tokens: Vec<u32> = path[..accept_len].iter().map(|&n| state.tokens[n + 1]).collect();
    tokens.push(verdicts[row(accept_len.checked_sub(1).map(|i| path[i]))]);
    let mut kv_rows = vec![0];
    kv_rows.extend(path[..accept_len].iter().map(|&n| n + 1));
    let n = session.commit(&out.kv, &kv_rows, &tokens)?;
    tokens.truncate(n);
    let (next_roots, continuation) = match path.get(accept_len) {
        Some(&rejected) => (
            Some(top_k(out.logits.row(rejected + 1), template.k())),
            path[accept_len + 1..].iter().map(|&n| verdicts[n + 1]).collect(),
        ),
        None => (None, Vec::new()),
    };
    Ok(TreeStep {
        verdicts,
        accepted,
        best_path,
        accept_len,
        committed: tokens,
        next_roots,
        continuation,
    })
}

/// Tree decoding. With `retrieval` set, the template's retrieval chain is
/// filled from prompt lookup each round; without it, the chain (if the
/// template has one) is dropped.
pub fn tree_generate(
    weights: &TransformerWeights,
    prompt: &[u32],
    template: &DraftTreeTemplate,
    retrieval: Option<RetrievalConfig>,
    opts: DecodeOptions,
) -> Result<Generation> {
    let template = match retrieval {
        Some(_) if !template.has_retrieval() => {
            return Err(Error::Template(
                "retrieval requested but the template has no retrieval chain".into(),
            ))
        }
        Some(_) => Cow::Borrowed(template),
        None if template.has_retrieval() => Cow::Owned(template.without_retrieval()),
        None => Cow::Borrowed(template),
    };
    let mut s = DecodeSession::start(weights, prompt, opts)?;
    let mut roots: Option<Vec<u32>> = None;
    let mut continuation: Vec<u32> = Vec::new();
    while !s.is_done() {
        let t = if s.room() < template.levels() {
            Cow::Owned(template.truncated(s.room()))
        } else {
            Cow::Borrowed(template.as_ref())
        };
        let retrieved =
            retrieval.and_then(|r| pld_retrieve(s.committed(), r.max_ngram, r.path_len.min(t.retrieval_path().len())));
        let (anchor, pos) = (s.anchor(), s.anchor_position());
        let fill = TreeFill {
            roots: roots.as_deref(),
            continuation: &continuation,
            retrieval: retrieved.as_deref(),
        };
        let state = build_tree(&t, anchor, pos, fill, || s.ahead_noise());
        let step = tree_verify(&mut s, &t, &state)?;
        roots = step.next_roots;
        continuation = step.continuation;
    }
    s.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_mask() {
        let t = DraftTreeTemplate::parse("0 -1 0\n1 -1 0\n2 0 0\n3 -1 1").unwrap();
        let fill = TreeFill {
            roots: Some(&[10, 11]),
            continuation: &[12],
            retrieval: Some(&[13]),
        };
        let s = build_tree(&t, 9, 3, fill, || 99);
        assert_eq!(s.tokens, vec![9, 10, 11, 12, 13]);
        assert_eq!(s.positions, vec![3, 4, 4, 5, 4]);
        assert_eq!(s.mask.keys(), 3 + 5);
        // cache and anchor visible to all rows
        for q in 0..5 {
            assert!((0..=3).all(|k| s.mask.allows(q, k)));
        }
        assert!(!s.mask.allows(0, 4));
        // node 2 sees root 0 and itself, not root 1
        assert!(s.mask.allows(3, 4) && s.mask.allows(3, 6) && !s.mask.allows(3, 5));
        assert!(!s.mask.allows(4, 4) && s.mask.allows(4, 7));
        s.mask.validate(5, 3).unwrap();
    }

    #[test]
    fn missing_slots_take_noise() {
        let t = DraftTreeTemplate::default_tree();
        let s = build_tree(&t, 1, 0, TreeFill::default(), || 7);
        assert_eq!(s.tokens.len(), 22);
        assert!(s.tokens[1..].iter().all(|&x| x == 7));
    }
}

//! Decoder forward pass (masked, cached inference and packed training) and
//! its hand-derived backward pass.

use std::ops::Range;

use crate::error::{dim_err, Error, Result};
use crate::model::{AttentionMask, KvCache, KvDelta, TransformerWeights};
use crate::numerics::{gelu, gelu_grad, gemm, layer_norm_backward, layer_norm_forward, LayerNormCache, Matrix};

pub(crate) const LN_EPS: f32 = 1e-5;

/// Logits for every input position plus the keys/values of the new tokens.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Row `r` scores the token that follows input position `r`.
    pub logits: Matrix,
    pub kv: KvDelta,
}

/// Runs the decoder over `tokens` at the given absolute `positions`, on top of
/// an optional cached prefix, restricted by `mask`.
pub fn forward(
    weights: &TransformerWeights,
    tokens: &[u32],
    positions: &[usize],
    mask: &AttentionMask,
    cache: Option<&KvCache>,
) -> Result<ForwardOutput> {
    let prefix = cache.map_or(0, KvCache::len);
    if positions.len() != tokens.len() {
        return Err(dim_err(
            "forward",
            format!("{} positions for {} tokens", positions.len(), tokens.len()),
        ));
    }
    mask.validate(tokens.len(), prefix)?;
    if let Some(c) = cache {
        if c.n_layers() != weights.layers.len() {
            return Err(dim_err(
                "forward",
                format!("cache has {} layers, model {}", c.n_layers(), weights.layers.len()),
            ));
        }
    }
    let keys = Keys::Masked { mask, cache };
    let (logits, kv, _) = run(weights, tokens, positions, &keys, false)?;
    Ok(ForwardOutput { logits, kv })
}

/// Plain causal forward over `tokens` at positions `0..n`, no cache.
pub fn forward_causal(weights: &TransformerWeights, tokens: &[u32]) -> Result<Matrix> {
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let mask = crate::model::causal_mask(tokens.len(), 0);
    Ok(forward(weights, tokens, &positions, &mask, None)?.logits)
}

/// Lowest token id among the maximal scores.
pub fn greedy_next(row: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// The `k` highest-scoring ids, best first, ties to the lower id.
pub fn top_k(row: &[f32], k: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..row.len() as u32).collect();
    ids.sort_by(|&a, &b| {
        row[b as usize]
            .partial_cmp(&row[a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ids.truncate(k);
    ids
}

/// Several independent sequences laid end to end; attention never crosses a
/// segment boundary and positions restart at 0 in each segment.
#[derive(Clone, Debug)]
pub(crate) struct PackedBatch {
    pub tokens: Vec<u32>,
    pub positions: Vec<usize>,
    pub segments: Vec<Range<usize>>,
}

impl PackedBatch {
    pub fn new<'a>(sequences: impl IntoIterator<Item = &'a [u32]>) -> Self {
        let mut tokens = Vec::new();
        let mut positions = Vec::new();
        let mut segments = Vec::new();
        for seq in sequences {
            let start = tokens.len();
            tokens.extend_from_slice(seq);
            positions.extend(0..seq.len());
            segments.push(start..tokens.len());
        }
        Self {
            tokens,
            positions,
            segments,
        }
    }
}

pub(crate) struct LayerTape {
    ln1: LayerNormCache,
    h1: Matrix,
    qkv: Matrix,
    /// Attention probabilities per (query, head) over that query's keys.
    probs: Vec<Vec<f32>>,
    att: Matrix,
    ln2: LayerNormCache,
    h2: Matrix,
    pre_act: Matrix,
    act: Matrix,
}

/// Activations recorded by a packed forward for the backward pass.
pub(crate) struct Tape {
    batch: PackedBatch,
    layers: Vec<LayerTape>,
    lnf: LayerNormCache,
    xf: Matrix,
}

pub(crate) fn forward_packed(
    weights: &TransformerWeights,
    batch: &PackedBatch,
    record: bool,
) -> Result<(Matrix, Option<Tape>)> {
    let keys = Keys::Packed(&batch.segments);
    let (logits, _, tape) = run(weights, &batch.tokens, &batch.positions, &keys, record)?;
    let tape = tape.map(|(layers, lnf, xf)| Tape {
        batch: batch.clone(),
        layers,
        lnf,
        xf,
    });
    Ok((logits, tape))
}

enum Keys<'a> {
    Packed(&'a [Range<usize>]),
    Masked {
        mask: &'a AttentionMask,
        cache: Option<&'a KvCache>,
    },
}

impl Keys<'_> {
    /// Indices into the concatenated key rows visible to query `i`, ascending.
    fn visible(&self, i: usize, segment_of: &[usize]) -> Vec<usize> {
        match self {
            Keys::Packed(segments) => {
                let seg = &segments[segment_of[i]];
                (seg.start..=i).collect()
            }
            Keys::Masked { mask, .. } => mask
                .row(i)
                .iter()
                .enumerate()
                .filter_map(|(k, &ok)| ok.then_some(k))
                .collect(),
        }
    }
}

type TapeParts = (Vec<LayerTape>, LayerNormCache, Matrix);

fn run(
    w: &TransformerWeights,
    tokens: &[u32],
    positions: &[usize],
    keys: &Keys<'_>,
    record: bool,
) -> Result<(Matrix, KvDelta, Option<TapeParts>)> {
    let cfg = &w.config;
    let d = cfg.d_model;
    let n = tokens.len();
    let mut x = Matrix::zeros(n, d);
    for (i, (&t, &p)) in tokens.iter().zip(positions).enumerate() {
        if t as usize >= cfg.vocab_size {
            return Err(dim_err(
                "forward",
                format!("token {t} outside vocabulary {}", cfg.vocab_size),
            ));
        }
        if p >= cfg.max_positions {
            return Err(Error::PositionOverflow {
                position: p,
                max: cfg.max_positions,
            });
        }
        let row = x.row_mut(i);
        for ((o, &a), &b) in row.iter_mut().zip(w.tok_emb.row(t as usize)).zip(w.pos_emb.row(p)) {
            *o = a + b;
        }
    }

    let segment_of: Vec<usize> = match keys {
        Keys::Packed(segments) => {
            let mut s = vec![0; n];
            for (si, seg) in segments.iter().enumerate() {
                s[seg.clone()].fill(si);
            }
            s
        }
        Keys::Masked { .. } => Vec::new(),
    };
    let visible: Vec<Vec<usize>> = (0..n).map(|i| keys.visible(i, &segment_of)).collect();

    let mut kv_layers = Vec::with_capacity(w.layers.len());
    let mut tapes = Vec::new();
    for (l, lw) in w.layers.iter().enumerate() {
        let (h1, ln1) = layer_norm_forward(&x, lw.ln1_gamma.data(), lw.ln1_beta.data(), LN_EPS);
        let mut qkv = Matrix::zeros(n, 3 * d);
        gemm(&mut qkv, &h1, false, &lw.w_qkv, false, 1.0, 0.0);
        qkv.add_row_broadcast(lw.b_qkv.data());

        let mut k_new = Matrix::zeros(n, d);
        let mut v_new = Matrix::zeros(n, d);
        for i in 0..n {
            let row = qkv.row(i);
            k_new.row_mut(i).copy_from_slice(&row[d..2 * d]);
            v_new.row_mut(i).copy_from_slice(&row[2 * d..]);
        }
        let (k_all, v_all) = match keys {
            Keys::Masked { cache: Some(c), .. } if !c.is_empty() => {
                let (ck, cv) = c.layer(l);
                let mut k = ck.clone();
                let mut v = cv.clone();
                k.append_rows(&k_new)?;
                v.append_rows(&v_new)?;
                (k, v)
            }
            _ => (k_new.clone(), v_new.clone()),
        };

        let (att, probs) = attend(cfg.n_heads, &qkv, &k_all, &v_all, &visible, record);

        let mut x2 = x.clone();
        gemm(&mut x2, &att, false, &lw.w_out, false, 1.0, 1.0);
        x2.add_row_broadcast(lw.b_out.data());

        let (h2, ln2) = layer_norm_forward(&x2, lw.ln2_gamma.data(), lw.ln2_beta.data(), LN_EPS);
        let mut pre_act = Matrix::zeros(n, cfg.d_ff);
        gemm(&mut pre_act, &h2, false, &lw.w_fc, false, 1.0, 0.0);
        pre_act.add_row_broadcast(lw.b_fc.data());
        let mut act = pre_act.clone();
        for v in act.data_mut() {
            *v = gelu(*v);
        }
        let mut x3 = x2;
        gemm(&mut x3, &act, false, &lw.w_proj, false, 1.0, 1.0);
        x3.add_row_broadcast(lw.b_proj.data());

        kv_layers.push((k_new, v_new));
        if record {
            tapes.push(LayerTape {
                ln1,
                h1,
                qkv,
                probs,
                att,
                ln2,
                h2,
                pre_act,
                act,
            });
        }
        x = x3;
    }

    let (xf, lnf) = layer_norm_forward(&x, w.lnf_gamma.data(), w.lnf_beta.data(), LN_EPS);
    let mut logits = Matrix::zeros(n, cfg.vocab_size);
    gemm(&mut logits, &xf, false, &w.lm_head, false, 1.0, 0.0);
    let tape = record.then_some((tapes, lnf, xf));
    Ok((logits, KvDelta { layers: kv_layers }, tape))
}

/// Multi-head attention of the new queries over `k_all`/`v_all`. Keys a query
/// cannot see get zero weight, which is the additive `-inf` mask exactly.
fn attend(
    n_heads: usize,
    qkv: &Matrix,
    k_all: &Matrix,
    v_all: &Matrix,
    visible: &[Vec<usize>],
    record: bool,
) -> (Matrix, Vec<Vec<f32>>) {
    let n = qkv.rows();
    let d = k_all.cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut out = Matrix::zeros(n, d);
    let mut all_probs = Vec::with_capacity(if record { n * n_heads } else { 0 });
    let mut scores = Vec::new();
    for (i, keys) in visible.iter().enumerate() {
        let q_row = &qkv.row(i)[..d];
        for h in 0..n_heads {
            let hs = h * dh..(h + 1) * dh;
            let q = &q_row[hs.clone()];
            scores.clear();
            let mut max = f32::NEG_INFINITY;
            for &j in keys {
                let k = &k_all.row(j)[hs.clone()];
                let s = dot(q, k) * scale;
                max = max.max(s);
                scores.push(s);
            }
            let mut sum = 0.0f64;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                sum += *s as f64;
            }
            let inv = (1.0 / sum) as f32;
            let o = &mut out.row_mut(i)[hs.clone()];
            for (p, &j) in scores.iter_mut().zip(keys) {
                *p *= inv;
                let v = &v_all.row(j)[hs.clone()];
                for (oc, &vc) in o.iter_mut().zip(v) {
                    *oc += *p * vc;
                }
            }
            if record {
                all_probs.push(scores.clone());
            }
        }
    }
    (out, all_probs)
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Accumulates parameter gradients of `sum(dlogits * logits)` into `grads`.
pub(crate) fn backward(w: &TransformerWeights, tape: &Tape, dlogits: &Matrix, grads: &mut TransformerWeights) {
    let cfg = &w.config;
    let d = cfg.d_model;
    let n = tape.batch.tokens.len();
    let n_heads = cfg.n_heads;

    gemm(&mut grads.lm_head, &tape.xf, true, dlogits, false, 1.0, 1.0);
    let mut dxf = Matrix::zeros(n, d);
    gemm(&mut dxf, dlogits, false, &w.lm_head, true, 1.0, 0.0);
    let mut dx = layer_norm_backward(
        &dxf,
        &tape.lnf,
        w.lnf_gamma.data(),
        grads.lnf_gamma.data_mut(),
        grads.lnf_beta.data_mut(),
    );

    let segment_of: Vec<usize> = {
        let mut s = vec![0; n];
        for (si, seg) in tape.batch.segments.iter().enumerate() {
            s[seg.clone()].fill(si);
        }
        s
    };

    for (l, lw) in w.layers.iter().enumerate().rev() {
        let t = &tape.layers[l];
        let g = &mut grads.layers[l];

        // MLP
        gemm(&mut g.w_proj, &t.act, true, &dx, false, 1.0, 1.0);
        dx.accumulate_col_sums(g.b_proj.data_mut());
        let mut dact = Matrix::zeros(n, cfg.d_ff);
        gemm(&mut dact, &dx, false, &lw.w_proj, true, 1.0, 0.0);
        for (da, &u) in dact.data_mut().iter_mut().zip(t.pre_act.data()) {
            *da *= gelu_grad(u);
        }
        gemm(&mut g.w_fc, &t.h2, true, &dact, false, 1.0, 1.0);
        dact.accumulate_col_sums(g.b_fc.data_mut());
        let mut dh2 = Matrix::zeros(n, d);
        gemm(&mut dh2, &dact, false, &lw.w_fc, true, 1.0, 0.0);
        let dx_ln2 = layer_norm_backward(
            &dh2,
            &t.ln2,
            lw.ln2_gamma.data(),
            g.ln2_gamma.data_mut(),
            g.ln2_beta.data_mut(),
        );
        dx.add_scaled(&dx_ln2, 1.0).expect("same shape");

        // attention
        gemm(&mut g.w_out, &t.att, true, &dx, false, 1.0, 1.0);
        dx.accumulate_col_sums(g.b_out.data_mut());
        let mut datt = Matrix::zeros(n, d);
        gemm(&mut datt, &dx, false, &lw.w_out, true, 1.0, 0.0);

        let dqkv = attend_backward(n_heads, &t.qkv, &t.probs, &datt, &tape.batch.segments, &segment_of);
        gemm(&mut g.w_qkv, &t.h1, true, &dqkv, false, 1.0, 1.0);
        dqkv.accumulate_col_sums(g.b_qkv.data_mut());
        let mut dh1 = Matrix::zeros(n, d);
        gemm(&mut dh1, &dqkv, false, &lw.w_qkv, true, 1.0, 0.0);
        let dx_ln1 = layer_norm_backward(
            &dh1,
            &t.ln1,
            lw.ln1_gamma.data(),
            g.ln1_gamma.data_mut(),
            g.ln1_beta.data_mut(),
        );
        dx.add_scaled(&dx_ln1, 1.0).expect("same shape");
    }

    for (i, (&tok, &pos)) in tape.batch.tokens.iter().zip(&tape.batch.positions).enumerate() {
        let row = dx.row(i);
        for (g, &v) in grads.tok_emb.row_mut(tok as usize).iter_mut().zip(row) {
            *g += v;
        }
        for (g, &v) in grads.pos_emb.row_mut(pos).iter_mut().zip(row) {
            *g += v;
        }
    }
}

fn attend_backward(
    n_heads: usize,
    qkv: &Matrix,
    probs: &[Vec<f32>],
    datt: &Matrix,
    segments: &[Range<usize>],
    segment_of: &[usize],
) -> Matrix {
    let n = qkv.rows();
    let d = datt.cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut dqkv = Matrix::zeros(n, 3 * d);
    let mut dp = Vec::new();
    for i in 0..n {
        let start = segments[segment_of[i]].start;
        for h in 0..n_heads {
            let p = &probs[i * n_heads + h];
            let hs = h * dh..(h + 1) * dh;
            let go: Vec<f32> = datt.row(i)[hs.clone()].to_vec();
            dp.clear();
            let mut weighted = 0.0f32;
            for (idx, j) in (start..=i).enumerate() {
                let v = &qkv.row(j)[2 * d + h * dh..2 * d + (h + 1) * dh];
                let g = dot(&go, v);
                weighted += p[idx] * g;
                dp.push(g);
                // dV_j += p_ij * dout_i
                let dv = &mut dqkv.row_mut(j)[2 * d + h * dh..2 * d + (h + 1) * dh];
                for (a, &b) in dv.iter_mut().zip(&go) {
                    *a += p[idx] * b;
                }
            }
            let q: Vec<f32> = qkv.row(i)[hs.clone()].to_vec();
            let mut dq = vec![0.0f32; dh];
            for (idx, j) in (start..=i).enumerate() {
                let ds = p[idx] * (dp[idx] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                let k = &qkv.row(j)[d + h * dh..d + (h + 1) * dh];
                for (a, &b) in dq.iter_mut().zip(k) {
                    *a += ds * b;
                }
                let dk = &mut dqkv.row_mut(j)[d + h * dh..d + (h + 1) * dh];
                for (a, &b) in dk.iter_mut().zip(&q) {
                    *a += ds * b;
                }
            }
            for (a, b) in dqkv.row_mut(i)[hs].iter_mut().zip(dq) {
                *a += b;
            }
        }
    }
    dqkv
}

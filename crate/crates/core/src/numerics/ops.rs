use crate::error::{dim_err, Result};
use crate::numerics::Matrix;

/// Target value excluded from the loss (prompt positions, padding).
pub const IGNORE_INDEX: i32 = -1;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v as f64;
    }
    let inv = (1.0 / sum) as f32;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Per-row statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct LayerNormCache {
    pub xhat: Matrix,
    pub rstd: Vec<f32>,
}

pub fn layer_norm(x: &Matrix, gamma: &[f32], beta: &[f32], eps: f32) -> Result<Matrix> {
    if gamma.len() != x.cols() || beta.len() != x.cols() {
        return Err(dim_err(
            "layer_norm",
            format!("gamma {} / beta {} for {} columns", gamma.len(), beta.len(), x.cols()),
        ));
    }
    Ok(layer_norm_forward(x, gamma, beta, eps).0)
}

pub(crate) fn layer_norm_forward(x: &Matrix, gamma: &[f32], beta: &[f32], eps: f32) -> (Matrix, LayerNormCache) {
    let (rows, cols) = x.shape();
    let mut out = Matrix::zeros(rows, cols);
    let mut xhat = Matrix::zeros(rows, cols);
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / cols as f64;
        let var = row
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / cols as f64;
        let denom = var + eps as f64;
        // a zero-variance row with eps = 0 normalizes to zero instead of NaN
        let rs = if denom > 0.0 { 1.0 / denom.sqrt() } else { 0.0 };
        rstd.push(rs as f32);
        let xh = xhat.row_mut(r);
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = ((v as f64 - mean) * rs) as f32;
        }
        let o = out.row_mut(r);
        for c in 0..cols {
            o[c] = xh[c] * gamma[c] + beta[c];
        }
    }
    (out, LayerNormCache { xhat, rstd })
}

/// Returns `dx` and accumulates into `dgamma` / `dbeta`.
pub(crate) fn layer_norm_backward(
    dout: &Matrix,
    cache: &LayerNormCache,
    gamma: &[f32],
    dgamma: &mut [f32],
    dbeta: &mut [f32],
) -> Matrix {
    let (rows, cols) = dout.shape();
    let mut dx = Matrix::zeros(rows, cols);
    let mut dxhat = vec![0.0f32; cols];
    for r in 0..rows {
        let dy = dout.row(r);
        let xh = cache.xhat.row(r);
        let mut sum_dxhat = 0.0f64;
        let mut sum_dxhat_xhat = 0.0f64;
        for c in 0..cols {
            dgamma[c] += dy[c] * xh[c];
            dbeta[c] += dy[c];
            dxhat[c] = dy[c] * gamma[c];
            sum_dxhat += dxhat[c] as f64;
            sum_dxhat_xhat += dxhat[c] as f64 * xh[c] as f64;
        }
        let mean_d = (sum_dxhat / cols as f64) as f32;
        let mean_dx = (sum_dxhat_xhat / cols as f64) as f32;
        let rs = cache.rstd[r];
        let out = dx.row_mut(r);
        for c in 0..cols {
            out[c] = rs * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

const GELU_K: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_C: f32 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad(x: f32) -> f32 {
    let inner = GELU_K * (x + GELU_C * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_K * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Result of a masked cross-entropy evaluation.
#[derive(Clone, Debug)]
pub struct CrossEntropy {
    /// Mean loss over counted rows (0 when every row is ignored).
    pub loss: f64,
    /// Summed loss over counted rows.
    pub sum: f64,
    pub count: usize,
    /// Gradient with respect to the logits.
    pub grad: Matrix,
    pub all_ignored: bool,
}

/// Mean `-log softmax(logits)[row, target]` over rows whose target is not
/// [`IGNORE_INDEX`]; the gradient is `(softmax - onehot) / count`.
pub fn cross_entropy(logits: &Matrix, targets: &[i32]) -> Result<CrossEntropy> {
    let count = count_targets(logits, targets)?;
    let scale = if count == 0 { 0.0 } else { 1.0 / count as f32 };
    cross_entropy_scaled(logits, targets, scale)
}

fn count_targets(logits: &Matrix, targets: &[i32]) -> Result<usize> {
    if targets.len() != logits.rows() {
        return Err(dim_err(
            "cross_entropy",
            format!("{} targets for {} rows", targets.len(), logits.rows()),
        ));
    }
    let mut count = 0;
    for (r, &t) in targets.iter().enumerate() {
        if t == IGNORE_INDEX {
            continue;
        }
        if t < 0 || t as usize >= logits.cols() {
            return Err(dim_err(
                "cross_entropy",
                format!("target {t} at row {r} outside vocabulary {}", logits.cols()),
            ));
        }
        count += 1;
    }
    Ok(count)
}

/// Same as [`cross_entropy`] but the gradient rows are multiplied by
/// `grad_scale` instead of `1 / count`, so several sequences can share one
/// normalizer.
pub(crate) fn cross_entropy_scaled(logits: &Matrix, targets: &[i32], grad_scale: f32) -> Result<CrossEntropy> {
    let count = count_targets(logits, targets)?;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut sum = 0.0f64;
    for (r, &t) in targets.iter().enumerate() {
        if t == IGNORE_INDEX {
            continue;
        }
        let t = t as usize;
        let row = logits.row(r);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let denom: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum();
        let lse = max as f64 + denom.ln();
        sum += lse - row[t] as f64;
        let g = grad.row_mut(r);
        for (gc, &v) in g.iter_mut().zip(row) {
            *gc = (((v - max) as f64).exp() / denom) as f32 * grad_scale;
        }
        g[t] -= grad_scale;
    }
    let loss = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok(CrossEntropy {
        loss,
        sum,
        count,
        grad,
        all_ignored: count == 0,
    })
}

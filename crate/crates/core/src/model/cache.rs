use crate::error::{dim_err, Result};
use crate::numerics::Matrix;

/// Keys and values produced by one forward for its new positions, one pair
/// per layer. Nothing is cached until the caller commits selected rows.
#[derive(Clone, Debug)]
pub struct KvDelta {
    pub(crate) layers: Vec<(Matrix, Matrix)>,
}

impl KvDelta {
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |(k, _)| k.rows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-layer keys and values of the committed prefix.
#[derive(Clone, Debug)]
pub struct KvCache {
    layers: Vec<(Matrix, Matrix)>,
    len: usize,
}

impl KvCache {
    pub fn new(n_layers: usize, d_model: usize) -> Self {
        Self {
            layers: (0..n_layers)
                .map(|_| (Matrix::zeros(0, d_model), Matrix::zeros(0, d_model)))
                .collect(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub(crate) fn layer(&self, l: usize) -> (&Matrix, &Matrix) {
        let (k, v) = &self.layers[l];
        (k, v)
    }

    /// Appends the given rows of `delta` (in the order listed).
    pub fn commit(&mut self, delta: &KvDelta, rows: &[usize]) -> Result<()> {
        if delta.layers.len() != self.layers.len() {
            return Err(dim_err(
                "KvCache::commit",
                format!(
                    "{} delta layers for {} cache layers",
                    delta.layers.len(),
                    self.layers.len()
                ),
            ));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= delta.len()) {
            return Err(dim_err(
                "KvCache::commit",
                format!("row {bad} of a {}-row delta", delta.len()),
            ));
        }
        for ((ck, cv), (dk, dv)) in self.layers.iter_mut().zip(&delta.layers) {
            ck.append_rows(&dk.gather_rows(rows))?;
            cv.append_rows(&dv.gather_rows(rows))?;
        }
        self.len += rows.len();
        Ok(())
    }

    pub fn commit_all(&mut self, delta: &KvDelta) -> Result<()> {
        let rows: Vec<usize> = (0..delta.len()).collect();
        self.commit(delta, &rows)
    }

    /// A cache holding only the listed positions, in order.
    pub fn gather(&self, rows: &[usize]) -> KvCache {
        KvCache {
            layers: self
                .layers
                .iter()
                .map(|(k, v)| (k.gather_rows(rows), v.gather_rows(rows)))
                .collect(),
            len: rows.len(),
        }
    }
}

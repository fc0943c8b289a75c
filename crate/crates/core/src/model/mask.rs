use crate::error::{dim_err, Result};

/// Boolean attention pattern: entry `(q, k)` is true iff new position `q`
/// may attend to key `k`. Keys are the cached prefix followed by the new
/// positions, so a mask over `n` new tokens with a prefix of `p` is `n x (p + n)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(queries: usize, keys: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(queries * keys);
        for q in 0..queries {
            for k in 0..keys {
                allowed.push(f(q, k));
            }
        }
        Self { queries, keys, allowed }
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn keys(&self) -> usize {
        self.keys
    }

    #[inline]
    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.keys + k]
    }

    pub fn row(&self, q: usize) -> &[bool] {
        &self.allowed[q * self.keys..(q + 1) * self.keys]
    }

    /// Checks the shape against `n` new tokens over a prefix of `prefix_len`
    /// and that every query sees its own key.
    pub fn validate(&self, n: usize, prefix_len: usize) -> Result<()> {
        if self.queries != n || self.keys != prefix_len + n {
            return Err(dim_err(
                "AttentionMask",
                format!(
                    "mask is {}x{}, expected {}x{}",
                    self.queries,
                    self.keys,
                    n,
                    prefix_len + n
                ),
            ));
        }
        for q in 0..n {
            if !self.allows(q, prefix_len + q) {
                return Err(dim_err("AttentionMask", format!("query {q} cannot attend to itself")));
            }
        }
        Ok(())
    }
}

/// Query `i` sees every cached key and the new keys `0..=i`.
pub fn causal_mask(n: usize, prefix_len: usize) -> AttentionMask {
    AttentionMask::from_fn(n, prefix_len + n, |q, k| k <= prefix_len + q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_no_prefix() {
        let m = causal_mask(1, 0);
        assert_eq!((m.queries(), m.keys()), (1, 1));
        assert!(m.allows(0, 0));
    }

    #[test]
    fn lower_triangular() {
        let m = causal_mask(3, 0);
        for q in 0..3 {
            for k in 0..3 {
                assert_eq!(m.allows(q, k), k <= q);
            }
        }
    }

    #[test]
    fn prefix_counts() {
        let m = causal_mask(2, 4);
        assert_eq!(m.keys(), 6);
        assert_eq!(m.row(0).iter().filter(|&&b| b).count(), 5);
        assert_eq!(m.row(1).iter().filter(|&&b| b).count(), 6);
        m.validate(2, 4).unwrap();
        assert!(m.validate(2, 3).is_err());
    }

    #[test]
    fn self_attention_required() {
        let m = AttentionMask::from_fn(2, 2, |q, k| q == 1 || k == 1);
        assert!(m.validate(2, 0).is_err());
    }
}

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub epsilon: f32,
    /// Number of coordinates to probe; all of them when the vector is shorter.
    pub samples: usize,
    /// Denominator floor of the relative error, so that coordinates whose
    /// true gradient is (near) zero are judged on absolute error instead.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            samples: 128,
            floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

/// Compares `analytic` against central finite differences of `loss_fn` at
/// `params` on a sampled subset of coordinates. `params` is restored before
/// returning.
pub fn grad_check<F>(
    mut loss_fn: F,
    params: &mut [f32],
    analytic: &[f32],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f32]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(dim_err(
            "grad_check",
            format!("{} params, {} gradients", params.len(), analytic.len()),
        ));
    }
    let n = params.len();
    let picks: Vec<usize> = if n <= opts.samples {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, n, opts.samples).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: picks.len(),
    };
    for i in picks {
        let orig = params[i];
        params[i] = orig + opts.epsilon;
        let plus = loss_fn(params);
        params[i] = orig - opts.epsilon;
        let minus = loss_fn(params);
        params[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        // the effective step is what f32 actually represents
        let h = (orig + opts.epsilon) as f64 - (orig - opts.epsilon) as f64;
        let numeric = (plus - minus) / h;
        let a = analytic[i] as f64;
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

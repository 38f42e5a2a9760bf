use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{RegressionConfig, TheoryError};

/// `s_k = step_base / k` for `k = 1..=num_steps`.
pub fn make_step_schedule(step_base: f64, num_steps: usize) -> Result<Vec<f64>, TheoryError> {
    if !(step_base > 0.0 && step_base.is_finite()) {
        return Err(TheoryError::InvalidConfig("step_base must be positive".into()));
    }
    if num_steps == 0 {
        return Err(TheoryError::InvalidConfig("num_steps must be positive".into()));
    }
    Ok((1..=num_steps).map(|k| step_base / k as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub final_weight: Vec<f64>,
    pub distance_to_optimal: f64,
    /// Unbiased sample variance of υ over the second half of the run.
    pub gradient_variance_estimate: f64,
    pub gradient_samples: usize,
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `w*`, drawn from stream 0 of the master seed.
pub fn optimal_weight(config: &RegressionConfig) -> Vec<f64> {
    let mut rng = stream_rng(config.seed, 0);
    (0..config.dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            config.optimum_scale * z
        })
        .collect()
}

/// One SGD run from `w₀ = 0`. Trial `k` draws from stream `k + 1`, so the
/// passive and proactive runs of a trial see identical `(i, e)` sequences.
pub fn simulate_sgd_trial(
    config: &RegressionConfig,
    trial_index: u64,
    proactive: bool,
) -> Result<TrialResult, TheoryError> {
    config.validate()?;
    let w_star = optimal_weight(config);
    Ok(run(config, &w_star, trial_index, proactive, config.max_steps))
}

pub(crate) fn run(
    config: &RegressionConfig,
    w_star: &[f64],
    trial_index: u64,
    proactive: bool,
    steps: usize,
) -> TrialResult {
    let dim = config.dim;
    let s = config.template_scalar;
    let mut rng = stream_rng(config.seed, trial_index + 1);
    let mut w = vec![0.0; dim];
    let mut i = vec![0.0; dim];
    let window_start = steps / 2;
    let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
    for t in 0..steps {
        for v in i.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        let e = config.sigma * z;
        let target: f64 = w_star.iter().zip(&i).map(|(a, b)| a * b).sum();
        let output = w.iter().zip(&i).map(|(a, b)| a * b).sum::<f64>() + e;
        let upsilon = if proactive {
            s * (s * output - target)
        } else {
            output - target
        };
        let step = config.step_base / (t + 1) as f64;
        for (wj, ij) in w.iter_mut().zip(&i) {
            *wj -= step * upsilon * ij;
        }
        if t >= window_start {
            // Welford
            n += 1;
            let d = upsilon - mean;
            mean += d / n as f64;
            m2 += d * (upsilon - mean);
        }
    }
    let distance = w
        .iter()
        .zip(w_star)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    TrialResult {
        final_weight: w,
        distance_to_optimal: distance,
        gradient_variance_estimate: if n > 1 { m2 / (n - 1) as f64 } else { 0.0 },
        gradient_samples: n,
    }
}

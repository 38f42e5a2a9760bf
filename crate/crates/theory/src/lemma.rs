use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{RegressionConfig, TheoryError};
use crate::sgd::{optimal_weight, run, TrialResult};

pub const MIN_TRIALS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    LemmaHolds,
    LemmaViolated,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialPair {
    pub passive: TrialResult,
    pub proactive: TrialResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub passive_mean_distance: f64,
    pub proactive_mean_distance: f64,
    /// σ²
    pub passive_variance_bound: f64,
    /// s⁴σ²
    pub proactive_variance_bound: f64,
    /// Mean per-trial Var(υ) estimates.
    pub passive_gradient_variance: f64,
    pub proactive_gradient_variance: f64,
    /// One-sided p-value for "proactive distance is smaller".
    pub p_value: f64,
    pub verdict: Verdict,
    #[serde(skip)]
    pub trials: Vec<TrialPair>,
}

impl ConvergenceReport {
    pub fn to_json(&self) -> Result<String, TheoryError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per trial, in trial order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TheoryError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "trial",
            "passive_distance",
            "proactive_distance",
            "passive_gradient_variance",
            "proactive_gradient_variance",
        ])?;
        for (k, t) in self.trials.iter().enumerate() {
            w.write_record([
                k.to_string(),
                t.passive.distance_to_optimal.to_string(),
                t.proactive.distance_to_optimal.to_string(),
                t.passive.gradient_variance_estimate.to_string(),
                t.proactive.gradient_variance_estimate.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub mean_difference: f64,
    pub t_statistic: f64,
    /// P(T ≥ t): small when the differences are positive.
    pub p_greater: f64,
    /// P(T ≤ t): small when the differences are negative.
    pub p_less: f64,
}

/// One-sample t-test on paired differences `d = a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> PairedTest {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let se = (var / n as f64).sqrt();
    if se == 0.0 || n < 2 {
        let (p_greater, p_less) = match mean.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => (0.0, 1.0),
            Some(std::cmp::Ordering::Less) => (1.0, 0.0),
            _ => (1.0, 1.0),
        };
        return PairedTest {
            mean_difference: mean,
            t_statistic: 0.0,
            p_greater,
            p_less,
        };
    }
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df ≥ 1");
    PairedTest {
        mean_difference: mean,
        t_statistic: t,
        p_greater: dist.sf(t),
        p_less: dist.cdf(t),
    }
}

/// Paired passive/proactive trials with common random numbers.
pub fn lemma1_compare(config: &RegressionConfig) -> Result<ConvergenceReport, TheoryError> {
    config.validate()?;
    if config.trials < MIN_TRIALS {
        return Err(TheoryError::TooFewTrials {
            min: MIN_TRIALS,
            got: config.trials,
        });
    }
    let w_star = optimal_weight(config);
    // collect() keeps trial order whatever the scheduling
    let trials: Vec<TrialPair> = (0..config.trials as u64)
        .into_par_iter()
        .map(|k| TrialPair {
            passive: run(config, &w_star, k, false, config.max_steps),
            proactive: run(config, &w_star, k, true, config.max_steps),
        })
        .collect();

    let n = trials.len() as f64;
    let mean = |f: &dyn Fn(&TrialPair) -> f64| trials.iter().map(f).sum::<f64>() / n;
    let passive: Vec<f64> = trials.iter().map(|t| t.passive.distance_to_optimal).collect();
    let proactive: Vec<f64> = trials.iter().map(|t| t.proactive.distance_to_optimal).collect();
    let test = paired_t_test(&passive, &proactive);
    let passive_mean = mean(&|t| t.passive.distance_to_optimal);
    let proactive_mean = mean(&|t| t.proactive.distance_to_optimal);

    let s = config.template_scalar;
    let degenerate = config.sigma == 0.0 || s == 1.0;
    let verdict = if degenerate {
        Verdict::Inconclusive
    } else if test.p_greater < config.significance && proactive_mean < passive_mean {
        Verdict::LemmaHolds
    } else if test.p_less < config.significance {
        Verdict::LemmaViolated
    } else {
        Verdict::Inconclusive
    };
    let sigma2 = config.sigma * config.sigma;
    Ok(ConvergenceReport {
        passive_mean_distance: passive_mean,
        proactive_mean_distance: proactive_mean,
        passive_variance_bound: sigma2,
        proactive_variance_bound: s.powi(4) * sigma2,
        passive_gradient_variance: mean(&|t| t.passive.gradient_variance_estimate),
        proactive_gradient_variance: mean(&|t| t.proactive.gradient_variance_estimate),
        p_value: test.p_greater,
        verdict,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_test_directions() {
        let a = [2.0, 2.1, 1.9, 2.05, 1.95];
        let b = [1.0, 1.1, 0.9, 1.0, 1.05];
        let t = paired_t_test(&a, &b);
        assert!(t.p_greater < 1e-4);
        assert!(t.p_less > 0.999);
        let same = paired_t_test(&a, &a);
        assert_eq!((same.p_greater, same.p_less), (1.0, 1.0));
    }

    #[test]
    fn t_statistic_against_hand_computation() {
        // d = [1, 2, 3]: mean 2, sd 1, se 1/sqrt(3), t = 2 sqrt(3)
        let t = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]);
        assert!((t.t_statistic - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        // two-sided p for t = 3.4641, df 2 is 0.0742
        assert!((2.0 * t.p_greater - 0.0742).abs() < 1e-3);
    }

    #[test]
    fn too_few_trials() {
        let cfg = RegressionConfig { trials: 10, ..Default::default() };
        assert!(matches!(lemma1_compare(&cfg), Err(TheoryError::TooFewTrials { .. })));
    }
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid regression config: {0}")]
    InvalidConfig(String),
    #[error("need at least {min} trials for a comparison, got {got}")]
    TooFewTrials { min: usize, got: usize },
    #[error(transparent)]
    Metric(#[from] proactive_metrics::MetricError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionConfig {
    pub dim: usize,
    /// Noise standard deviation.
    pub sigma: f64,
    /// `s₀` of the step schedule `s_k = s₀/k`.
    pub step_base: f64,
    pub max_steps: usize,
    pub trials: usize,
    /// Template scalar `s` in (0, 1].
    pub template_scalar: f64,
    pub seed: u64,
    /// `w* = optimum_scale · N(0, I)`. Zero keeps `Var(ŷ) = 0`.
    pub optimum_scale: f64,
    pub significance: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            sigma: 1.0,
            step_base: 0.5,
            max_steps: 1000,
            trials: 2000,
            template_scalar: 0.5,
            seed: 0,
            optimum_scale: 0.0,
            significance: 0.01,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<(), TheoryError> {
        let bad = |m: &str| Err(TheoryError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be a nonnegative number");
        }
        if !(self.step_base > 0.0 && self.step_base.is_finite()) {
            return bad("step_base must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if self.trials == 0 {
            return bad("trials must be positive");
        }
        if !(self.template_scalar > 0.0 && self.template_scalar <= 1.0) {
            return bad("template_scalar must lie in (0, 1]");
        }
        if !(self.optimum_scale >= 0.0 && self.optimum_scale.is_finite()) {
            return bad("optimum_scale must be a nonnegative number");
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return bad("significance must lie in (0, 1)");
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    AdaptiveMoment,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_decays")]
    pub moment_decays: (f64, f64),
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_decays() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            moment_decays: default_decays(),
            epsilon: default_epsilon(),
        }
    }

    pub fn adaptive_moment(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::AdaptiveMoment,
            ..Self::sgd(learning_rate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| {
            Err(TensorError::Invalid {
                op: "optimizer",
                detail,
            })
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        let (b1, b2) = self.moment_decays;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("moment decays must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// Applies one update to every trainable parameter of `store` from its
/// accumulated gradient. Plain SGD is `w -= lr * g`; the adaptive-moment rule
/// keeps bias-corrected first and second moment estimates.
pub fn optimizer_step<T: Scalar>(store: &mut ParamStore<T>, spec: &OptimizerSpec) -> Result<()> {
    spec.validate()?;
    let lr = T::from_f64(spec.learning_rate);
    for p in store.iter_mut().filter(|p| p.trainable) {
        match spec.kind {
            OptimizerKind::Sgd => {
                for (w, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::AdaptiveMoment => {
                let (b1, b2) = spec.moment_decays;
                let st = &mut p.state;
                st.steps += 1;
                let t = st.steps as i32;
                let c1 = T::from_f64(1.0 - b1.powi(t));
                let c2 = T::from_f64(1.0 - b2.powi(t));
                let (b1, b2) = (T::from_f64(b1), T::from_f64(b2));
                let eps = T::from_f64(spec.epsilon);
                let one = T::one();
                for (((w, &g), m), v) in p
                    .value
                    .data_mut()
                    .iter_mut()
                    .zip(p.grad.data())
                    .zip(st.first.iter_mut())
                    .zip(st.second.iter_mut())
                {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

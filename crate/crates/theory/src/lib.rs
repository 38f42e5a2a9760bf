//! Monte Carlo checks of SGD convergence for passive and template-scaled
//! linear regression.
//!
//! A trial runs SGD on `L = ½ r²` with residual `r = p − ŷ`, where `ŷ = w*ᵀi`
//! is the clean target and `p = wᵀi + e` the noisy model output. The
//! proactive model scales its output by the template scalar `s`:
//! `p′ = s(wᵀi + e)`, so `∂L′/∂w = (p′ − ŷ)·s·i` and the gradient-noise scalar
//! is `υ′ = s(p′ − ŷ)`. With `w* = 0` (the default `optimum_scale = 0`)
//! `Var(ŷ) = 0` and, at convergence, `Var(υ′) = s⁴σ²` against `Var(υ) = σ²`.

mod boxes;
mod config;
mod lemma;
mod sgd;

pub use boxes::{theorem1_check, BoxTaskSpec, Theorem1Report};
pub use config::{RegressionConfig, TheoryError};
pub use lemma::{lemma1_compare, paired_t_test, ConvergenceReport, PairedTest, TrialPair, Verdict};
pub use sgd::{make_step_schedule, optimal_weight, simulate_sgd_trial, TrialResult};

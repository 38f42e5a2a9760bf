use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, TrainingConfig};
use crate::eval::EvalMetrics;
use crate::train::Arm;

/// Mean losses over the `log_every` steps ending at `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub j: f64,
    pub j_obj: f64,
    pub j_e: f64,
    pub j_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub pretrain_fraction: f64,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    /// Detector gradient steps behind this arm's final checkpoint.
    pub detector_steps: usize,
}

impl Schedule {
    pub fn new(t: &TrainingConfig, arm: Arm) -> Self {
        let (p, f) = (t.pretrain_steps(), t.finetune_steps());
        Self {
            pretrain_fraction: t.pretrain_fraction,
            pretrain_steps: p,
            finetune_steps: f,
            detector_steps: if arm == Arm::Passive { p } else { p + f },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub arm: Arm,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub dataset_hash: String,
    pub schedule: Schedule,
    pub loss_curve: Vec<LossPoint>,
    pub metrics: EvalMetrics,
    pub decoder_cosine: Option<f64>,
    pub decoder_reads_during_eval: u64,
    /// Checkpoint file name → SHA-256 of its bytes.
    pub checkpoints: BTreeMap<String, String>,
    /// Left empty so that reports are reproducible byte for byte.
    pub wall_clock_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub seeds: Vec<u64>,
    pub median_ap: Option<f64>,
    pub median_ap50: Option<f64>,
    pub median_ap75: Option<f64>,
    pub median_mae: Option<f64>,
    pub median_f_beta: Option<f64>,
    pub median_decoder_cosine: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Per-arm medians over seeds, in arm order.
pub fn aggregate_reports(reports: &[RunReport]) -> Vec<ArmSummary> {
    let mut by_arm: BTreeMap<Arm, Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        by_arm.entry(r.arm).or_default().push(r);
    }
    by_arm
        .into_iter()
        .map(|(arm, rs)| {
            let pick = |f: &dyn Fn(&RunReport) -> Option<f64>| median(&rs.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            let mut seeds: Vec<u64> = rs.iter().map(|r| r.seed).collect();
            seeds.sort_unstable();
            ArmSummary {
                arm,
                seeds,
                median_ap: pick(&|r| r.metrics.ap),
                median_ap50: pick(&|r| r.metrics.ap50),
                median_ap75: pick(&|r| r.metrics.ap75),
                median_mae: pick(&|r| r.metrics.mae),
                median_f_beta: pick(&|r| r.metrics.f_beta),
                median_decoder_cosine: pick(&|r| r.decoder_cosine),
            }
        })
        .collect()
}

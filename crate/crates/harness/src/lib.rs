//! Configuration, training loops, ablation orchestration and reports for
//! the proactive detection experiments.

mod config;
mod data;
mod eval;
mod report;
mod run;
mod train;

pub use config::{config_hash, DataConfig, ExperimentConfig, TrainingConfig};
pub use data::{dataset_hash, generate_datasets, make_batch, Batch, BatchSampler, Datasets};
pub use eval::{decoder_cosine, evaluate, template_maps, EvalMetrics, Evaluation, ScenePrediction};
pub use report::{aggregate_reports, median, ArmSummary, LossPoint, RunReport, Schedule};
pub use run::{
    identity_wrapper, load_datasets, run_ablate, run_eval, run_gen_data, run_report, run_theory, run_train,
    sha256_hex, TrainTarget, PASSIVE_DIR,
};
pub use train::{fine_tune, pretrain, train_step, Arm, CheckpointHook, StepLosses, TrainOutput, ABLATION_ARMS};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset not found at {0}")]
    MissingDataset(PathBuf),
    #[error("checkpoint not found at {0}")]
    MissingCheckpoint(PathBuf),
    #[error("{0}")]
    Mismatch(String),
    #[error("non-finite loss at iteration {iteration}: {source}")]
    NonFinite {
        iteration: usize,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("evaluation read decoder parameters {0} times")]
    StageGating(u64),
    #[error(transparent)]
    Tensor(#[from] proactive_autograd::TensorError),
    #[error(transparent)]
    Checkpoint(#[from] proactive_autograd::CheckpointError),
    #[error(transparent)]
    Wrapper(#[from] proactive_wrapper::WrapperError),
    #[error(transparent)]
    Detector(#[from] proactive_detector::DetectorError),
    #[error(transparent)]
    Metric(#[from] proactive_metrics::MetricError),
    #[error(transparent)]
    Synth(#[from] proactive_synth::SynthError),
    #[error(transparent)]
    Format(#[from] proactive_synth::FormatError),
    #[error(transparent)]
    Theory(#[from] proactive_theory::TheoryError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code; see the table in the README.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 3,
            Self::MissingDataset(_) => 4,
            Self::MissingCheckpoint(_) => 5,
            Self::Mismatch(_) => 6,
            Self::NonFinite { .. } => 7,
            Self::StageGating(_) => 8,
            Self::Io(_) | Self::Csv(_) | Self::Format(_) | Self::Checkpoint(_) => 9,
            _ => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

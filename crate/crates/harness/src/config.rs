use std::path::{Path, PathBuf};

use proactive_autograd::OptimizerSpec;
use proactive_detector::DetectorConfig;
use proactive_synth::DatasetSpec;
use proactive_theory::{BoxTaskSpec, RegressionConfig};
use proactive_wrapper::WrapperConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Training scenes; the test scenes share every field except count and seed.
    pub scenes: DatasetSpec,
    pub test_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scenes: DatasetSpec {
                count: 2000,
                ..DatasetSpec::default()
            },
            test_count: 500,
        }
    }
}

/// Mixed into the training seed to get the test-set seed.
const TEST_SEED_SALT: u64 = 0x7e57_7e57_7e57_7e57;

impl DataConfig {
    pub fn train_spec(&self) -> DatasetSpec {
        self.scenes.clone()
    }

    pub fn test_spec(&self) -> DatasetSpec {
        DatasetSpec {
            count: self.test_count,
            seed: self.scenes.seed ^ TEST_SEED_SALT,
            ..self.scenes.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    /// Detector gradient steps of a proactive run, pretraining included.
    pub iterations: usize,
    /// Share of `iterations` spent on passive pretraining.
    pub pretrain_fraction: f64,
    pub detector_optimizer: OptimizerSpec,
    pub wrapper_optimizer: OptimizerSpec,
    pub log_every: usize,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub eval_batch_size: usize,
    /// Test templates written as PGM files per proactive arm.
    pub template_dumps: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            iterations: 5000,
            pretrain_fraction: 0.5,
            detector_optimizer: OptimizerSpec::sgd(1e-3),
            wrapper_optimizer: OptimizerSpec::adaptive_moment(1e-5),
            log_every: 50,
            checkpoint_every: 0,
            eval_batch_size: 50,
            template_dumps: 4,
        }
    }
}

impl TrainingConfig {
    pub fn pretrain_steps(&self) -> usize {
        (self.iterations as f64 * self.pretrain_fraction).round() as usize
    }

    pub fn finetune_steps(&self) -> usize {
        self.iterations - self.pretrain_steps()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed for initialization and batch order.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data_dir: PathBuf,
    pub data: DataConfig,
    pub wrapper: WrapperConfig,
    pub detector: DetectorConfig,
    pub training: TrainingConfig,
    pub theory: RegressionConfig,
    pub theorem: BoxTaskSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            data_dir: PathBuf::from("data"),
            data: DataConfig::default(),
            wrapper: WrapperConfig::default(),
            detector: DetectorConfig::default(),
            training: TrainingConfig::default(),
            theory: RegressionConfig::default(),
            theorem: BoxTaskSpec::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text after applying `section.key=value` overrides. Values
    /// are TOML literals; anything unparseable is taken as a string.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| HarnessError::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table.try_into().map_err(|e| HarnessError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let size = self.data.scenes.image_size;
        let cfg_err = |m: String| HarnessError::Config(m);
        self.data.scenes.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.data.test_spec().validate().map_err(|e| cfg_err(e.to_string()))?;
        self.wrapper.validate(size).map_err(|e| cfg_err(e.to_string()))?;
        self.detector.validate(size).map_err(|e| cfg_err(e.to_string()))?;
        if self.detector.num_classes != self.data.scenes.num_classes {
            return Err(cfg_err("detector.num_classes differs from data.scenes.num_classes".into()));
        }
        let t = &self.training;
        if t.iterations == 0 || t.batch_size == 0 || t.eval_batch_size == 0 || t.log_every == 0 {
            return Err(cfg_err("iterations, batch sizes and log_every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&t.pretrain_fraction) {
            return Err(cfg_err("pretrain_fraction must lie in [0, 1]".into()));
        }
        t.detector_optimizer.validate().map_err(|e| cfg_err(e.to_string()))?;
        t.wrapper_optimizer.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.theory.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(())
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override {assignment:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let keys: Vec<&str> = path.trim().split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields at least one item");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("{k} in {path} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// SHA-256 of the configuration with its filesystem paths blanked, so a run
/// can be evaluated from another directory.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output_dir = PathBuf::new();
    c.data_dir = PathBuf::new();
    let json = serde_json::to_vec(&c).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

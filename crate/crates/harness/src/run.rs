use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use proactive_autograd::Checkpoint;
use proactive_detector::Detector;
use proactive_synth::{read_dataset, write_dataset, Dataset, DatasetSpec};
use proactive_theory::{lemma1_compare, theorem1_check, ConvergenceReport, RegressionConfig};
use proactive_wrapper::{write_template_pgm, TemplateMode, TransformMode, Wrapper, WrapperConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{config_hash, ExperimentConfig};
use crate::data::{dataset_hash, generate_datasets, Datasets};
use crate::eval::{decoder_cosine, evaluate, template_maps, EvalMetrics};
use crate::report::{aggregate_reports, ArmSummary, RunReport};
use crate::train::{fine_tune, pretrain, Arm, CheckpointHook, TrainOutput, ABLATION_ARMS};
use crate::{HarnessError, Result};

pub const PASSIVE_DIR: &str = "passive";
const REPORT_FILE: &str = "report.json";
const DETECTOR_FILE: &str = "detector.ckpt";
const WRAPPER_FILE: &str = "wrapper.ckpt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn dataset_paths(cfg: &ExperimentConfig) -> (PathBuf, PathBuf) {
    (cfg.data_dir.join("train.pds"), cfg.data_dir.join("test.pds"))
}

/// Writes the training and test sets into `data_dir`.
pub fn run_gen_data(cfg: &ExperimentConfig) -> Result<Datasets> {
    let data = generate_datasets(&cfg.data)?;
    fs::create_dir_all(&cfg.data_dir)?;
    let (train, test) = dataset_paths(cfg);
    write_dataset(&data.train, &train)?;
    write_dataset(&data.test, &test)?;
    Ok(data)
}

fn load_one(path: &Path, expected: &DatasetSpec) -> Result<Dataset> {
    if !path.exists() {
        return Err(HarnessError::MissingDataset(path.to_path_buf()));
    }
    let d = read_dataset(path)?;
    if &d.spec != expected {
        return Err(HarnessError::Mismatch(format!(
            "dataset {} was generated from a different spec",
            path.display()
        )));
    }
    Ok(d)
}

pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    let (train, test) = dataset_paths(cfg);
    Ok(Datasets {
        train: load_one(&train, &cfg.data.train_spec())?,
        test: load_one(&test, &cfg.data.test_spec())?,
    })
}

fn write_checkpoint(dir: &Path, name: &str, ck: &Checkpoint, hashes: &mut BTreeMap<String, String>) -> Result<()> {
    let bytes = ck.to_bytes();
    fs::write(dir.join(name), &bytes)?;
    hashes.insert(name.to_string(), sha256_hex(&bytes));
    Ok(())
}

fn periodic_hook(dir: PathBuf, every: usize) -> impl FnMut(usize, &Detector, Option<&Wrapper>) -> Result<()> {
    move |step, det, wrapper| {
        if every == 0 || step % every != 0 {
            return Ok(());
        }
        let d = dir.join(format!("step_{step:06}"));
        fs::create_dir_all(&d)?;
        det.checkpoint().write(d.join(DETECTOR_FILE))?;
        if let Some(w) = wrapper {
            w.checkpoint().write(d.join(WRAPPER_FILE))?;
        }
        Ok(())
    }
}

/// Persists checkpoints, evaluates, and writes the report of one arm.
fn finish_arm(cfg: &ExperimentConfig, data: &Datasets, hash: &str, mut out: TrainOutput) -> Result<RunReport> {
    let dir = cfg.output_dir.join(out.arm.name());
    fs::create_dir_all(&dir)?;
    let mut checkpoints = BTreeMap::new();
    write_checkpoint(&dir, DETECTOR_FILE, &out.detector.checkpoint(), &mut checkpoints)?;
    if let Some(w) = &out.wrapper {
        write_checkpoint(&dir, WRAPPER_FILE, &w.checkpoint(), &mut checkpoints)?;
    }
    let test = &data.test.scenes;
    let eb = cfg.training.eval_batch_size;
    let evaluation = evaluate(&mut out.detector, out.wrapper.as_mut(), test, eb)?;
    write_predictions(&dir.join("predictions.jsonl"), &evaluation.predictions)?;
    let mut cosine = None;
    if let Some(w) = out.wrapper.as_mut() {
        cosine = decoder_cosine(w, test, eb)?;
        let n = cfg.data.scenes.image_size;
        let tdir = dir.join("templates");
        fs::create_dir_all(&tdir)?;
        for (i, map) in template_maps(w, test, cfg.training.template_dumps)?.iter().enumerate() {
            write_template_pgm(tdir.join(format!("scene_{i:04}.pgm")), map, n, n)?;
        }
    }
    let report = RunReport {
        arm: out.arm,
        seed: cfg.seed,
        config: cfg.clone(),
        config_hash: config_hash(cfg),
        dataset_hash: hash.to_string(),
        schedule: out.schedule,
        loss_curve: out.loss_curve,
        metrics: evaluation.metrics,
        decoder_cosine: cosine,
        decoder_reads_during_eval: 0,
        checkpoints,
        wall_clock_seconds: None,
    };
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

fn write_predictions<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn run_pretrain(cfg: &ExperimentConfig, data: &Datasets, hash: &str) -> Result<(Detector, RunReport)> {
    let mut hook = periodic_hook(cfg.output_dir.join(PASSIVE_DIR), cfg.training.checkpoint_every);
    let out = pretrain(cfg, data, Some(&mut hook as &mut CheckpointHook<'_>))?;
    let det = out.detector.clone();
    let report = finish_arm(cfg, data, hash, out)?;
    Ok((det, report))
}

fn run_fine_tune(cfg: &ExperimentConfig, data: &Datasets, hash: &str, arm: Arm, det: &Detector) -> Result<RunReport> {
    let mut hook = periodic_hook(cfg.output_dir.join(arm.name()), cfg.training.checkpoint_every);
    let out = fine_tune(cfg, data, arm, det, Some(&mut hook as &mut CheckpointHook<'_>))?;
    finish_arm(cfg, data, hash, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    /// Pretraining; writes `passive/`.
    Passive,
    /// Fine-tunes the image-dependent wrapper from `passive/`.
    Proactive,
}

pub fn run_train(cfg: &ExperimentConfig, target: TrainTarget) -> Result<RunReport> {
    let data = load_datasets(cfg)?;
    let hash = dataset_hash(&data);
    match target {
        TrainTarget::Passive => Ok(run_pretrain(cfg, &data, &hash)?.1),
        TrainTarget::Proactive => {
            let dir = cfg.output_dir.join(PASSIVE_DIR);
            let (det, _) = load_run(cfg, &dir)?;
            run_fine_tune(cfg, &data, &hash, Arm::ImageDependent, &det)
        }
    }
}

/// Pretrains once, then runs every ablation arm from the same checkpoint.
/// Reports come back in [`ABLATION_ARMS`] order whatever the thread count.
pub fn run_ablate(cfg: &ExperimentConfig) -> Result<Vec<RunReport>> {
    let data = load_datasets(cfg)?;
    let hash = dataset_hash(&data);
    let (det, _) = run_pretrain(cfg, &data, &hash)?;
    ABLATION_ARMS
        .par_iter()
        .map(|&arm| run_fine_tune(cfg, &data, &hash, arm, &det))
        .collect()
}

fn read_report(dir: &Path) -> Result<RunReport> {
    let path = dir.join(REPORT_FILE);
    let bytes = fs::read(&path).map_err(|_| HarnessError::MissingCheckpoint(path.clone()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn read_checked(dir: &Path, name: &str, report: &RunReport) -> Result<Checkpoint> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|_| HarnessError::MissingCheckpoint(path.clone()))?;
    match report.checkpoints.get(name) {
        Some(h) if *h == sha256_hex(&bytes) => Ok(Checkpoint::from_bytes(&bytes)?),
        _ => Err(HarnessError::Mismatch(format!(
            "{} does not match the hash recorded in its report",
            path.display()
        ))),
    }
}

/// Detector and wrapper of a finished run, after hash checks against `cfg`.
fn load_run(cfg: &ExperimentConfig, dir: &Path) -> Result<(Detector, Option<Wrapper>)> {
    let report = read_report(dir)?;
    if report.config_hash != config_hash(cfg) {
        return Err(HarnessError::Mismatch(format!(
            "run in {} was produced by a different config",
            dir.display()
        )));
    }
    let size = cfg.data.scenes.image_size;
    let mut det = Detector::new(cfg.detector.clone(), size, &mut ChaCha8Rng::seed_from_u64(0))?;
    det.load(&read_checked(dir, DETECTOR_FILE, &report)?)?;
    let wrapper = match report.arm.wrapper_config(&cfg.wrapper) {
        Some(wc) => {
            let mut w = Wrapper::new(wc, size, &mut ChaCha8Rng::seed_from_u64(0))?;
            w.load(&read_checked(dir, WRAPPER_FILE, &report)?)?;
            Some(w)
        }
        None => None,
    };
    Ok((det, wrapper))
}

/// All-ones frozen multiplicative template without a decoder.
pub fn identity_wrapper(image_size: usize) -> Result<Wrapper> {
    let cfg = WrapperConfig {
        template_mode: TemplateMode::Fixed,
        transform_mode: TransformMode::Multiply,
        use_decoder: false,
        fixed_template_low: 1.0,
        ..WrapperConfig::default()
    };
    Ok(Wrapper::new(cfg, image_size, &mut ChaCha8Rng::seed_from_u64(0))?)
}

/// Re-evaluates a finished run on the test set. With `identity_template`,
/// the run's detector sees its input through an all-ones template instead
/// of the run's own wrapper.
pub fn run_eval(cfg: &ExperimentConfig, run_dir: &Path, identity_template: bool) -> Result<EvalMetrics> {
    let data = load_datasets(cfg)?;
    let (mut det, mut wrapper) = load_run(cfg, run_dir)?;
    if identity_template {
        wrapper = Some(identity_wrapper(cfg.data.scenes.image_size)?);
    }
    let ev = evaluate(&mut det, wrapper.as_mut(), &data.test.scenes, cfg.training.eval_batch_size)?;
    let name = if identity_template { "eval_identity.json" } else { "eval.json" };
    write_json(&run_dir.join(name), &ev.metrics)?;
    Ok(ev.metrics)
}

/// Lemma 1 comparison and the linear box task under the master seed.
pub fn run_theory(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    let theory = RegressionConfig {
        seed: cfg.seed,
        ..cfg.theory.clone()
    };
    let report = lemma1_compare(&theory)?;
    let theorem = theorem1_check(&theory, &cfg.theorem)?;
    let dir = cfg.output_dir.join("theory");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("convergence.json"), report.to_json()? + "\n")?;
    report.write_csv(fs::File::create(dir.join("convergence.csv"))?)?;
    write_json(&dir.join("theorem1.json"), &theorem)?;
    Ok(report)
}

fn collect_reports(dir: &Path, out: &mut Vec<RunReport>) -> Result<()> {
    if dir.join(REPORT_FILE).exists() {
        out.push(read_report(dir)?);
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        if e.join(REPORT_FILE).exists() {
            out.push(read_report(&e)?);
        }
    }
    Ok(())
}

/// Aggregates every report found in `run_dirs` (or their immediate
/// subdirectories) into `comparison.{json,csv}` and `series.csv`.
pub fn run_report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<ArmSummary>> {
    let mut reports = Vec::new();
    for d in run_dirs {
        collect_reports(d, &mut reports)?;
    }
    let summary = aggregate_reports(&reports);
    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("comparison.json"), &summary)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    let mut csv = csv::Writer::from_path(out_dir.join("comparison.csv"))?;
    csv.write_record([
        "arm",
        "runs",
        "median_ap",
        "median_ap50",
        "median_ap75",
        "median_mae",
        "median_f_beta",
        "median_decoder_cosine",
    ])?;
    for s in &summary {
        csv.write_record([
            s.arm.to_string(),
            s.seeds.len().to_string(),
            opt(s.median_ap),
            opt(s.median_ap50),
            opt(s.median_ap75),
            opt(s.median_mae),
            opt(s.median_f_beta),
            opt(s.median_decoder_cosine),
        ])?;
    }
    csv.flush()?;
    let mut series = csv::Writer::from_path(out_dir.join("series.csv"))?;
    series.write_record(["arm", "seed", "step", "j", "j_obj", "j_e", "j_d"])?;
    for r in &reports {
        for p in &r.loss_curve {
            series.serialize((r.arm.name(), r.seed, p.step, p.j, p.j_obj, p.j_e, p.j_d))?;
        }
    }
    series.flush()?;
    Ok(summary)
}

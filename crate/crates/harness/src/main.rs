use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use proactive_harness::{
    run_ablate, run_eval, run_gen_data, run_report, run_theory, run_train, ExperimentConfig, HarnessError,
    TrainTarget,
};

#[derive(Parser)]
#[command(name = "proactive", version, about = "Proactive object detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long, short)]
    config: PathBuf,
    /// `section.key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainArm {
    Passive,
    Proactive,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo convergence comparison and the linear box task.
    Theory {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Generate the training and test sets.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain passively, or fine-tune the proactive wrapper from the pretrained run.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "passive")]
        arm: TrainArm,
    },
    /// Re-evaluate a finished run on the test set.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding report.json and the checkpoints.
        #[arg(long)]
        run: PathBuf,
        /// Feed the detector through an all-ones template instead of the run's wrapper.
        #[arg(long)]
        identity_template: bool,
    },
    /// Pretrain, then run all six ablation arms.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregate run reports into comparison tables.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config, &common.overrides)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(d) = &common.data_dir {
        cfg.data_dir = d.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Theory { common, seed } => {
            let cfg = load(&common, Some(seed))?;
            let r = run_theory(&cfg)?;
            println!(
                "passive {:.6} proactive {:.6} p={:.3e} {:?}",
                r.passive_mean_distance, r.proactive_mean_distance, r.p_value, r.verdict
            );
        }
        Command::GenData { common } => {
            let cfg = load(&common, None)?;
            let d = run_gen_data(&cfg)?;
            println!(
                "wrote {} training and {} test scenes to {}",
                d.train.scenes.len(),
                d.test.scenes.len(),
                cfg.data_dir.display()
            );
        }
        Command::Train { common, seed, arm } => {
            let cfg = load(&common, Some(seed))?;
            let target = match arm {
                TrainArm::Passive => TrainTarget::Passive,
                TrainArm::Proactive => TrainTarget::Proactive,
            };
            let r = run_train(&cfg, target)?;
            println!("{}: {}", r.arm, serde_json::to_string(&r.metrics)?);
        }
        Command::Eval {
            common,
            run,
            identity_template,
        } => {
            let cfg = load(&common, None)?;
            let m = run_eval(&cfg, &run, identity_template)?;
            println!("{}", serde_json::to_string(&m)?);
        }
        Command::Ablate { common, seed } => {
            let cfg = load(&common, seed)?;
            for r in run_ablate(&cfg)? {
                println!("{}: {}", r.arm, serde_json::to_string(&r.metrics)?);
            }
        }
        Command::Report { runs, out } => {
            let summary = run_report(&runs, &out).context("aggregating reports")?;
            for s in summary {
                println!("{}: {}", s.arm, serde_json::to_string(&s)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(1, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use outside_option::experiment::{self, ExperimentConfig, StageError};
use outside_option::inference::Mode;
use outside_option::Error;

const USAGE: u8 = 1;
const DATA: u8 = 2;
const NOT_CONVERGED: u8 = 3;

/// Reward-model experiments with an explicit outside option.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Restrict the mode table to one inference mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,

    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the labelled choice dataset.
    GenData,
    /// Fit the reward model.
    Fit,
    /// Find hard prompts and build the guardrail threshold schedule.
    Calibrate,
    /// Compare Best-of-N, guardrail and accelerator.
    Run,
    /// All stages in order.
    Full,
    /// Print the effective config as JSON.
    PrintConfig,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Bon,
    Guardrail,
    Accelerator,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Bon => Mode::StandardBon,
            ModeArg::Guardrail => Mode::Guardrail,
            ModeArg::Accelerator => Mode::Accelerator,
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(mode) = cli.mode {
        config.inference.mode = Some(mode.into());
    }
    if cli.threads.is_some() {
        config.threads = cli.threads;
    }
    config.validate()?;
    Ok(config)
}

fn exit_code(e: &StageError) -> u8 {
    match e {
        StageError::NotConverged(_) | StageError::Failed(Error::Diverged { .. }) => NOT_CONVERGED,
        StageError::Failed(_) => DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(USAGE);
        }
    };
    if let Some(threads) = config.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(USAGE);
        }
    }

    let dir = config.output_dir.display().to_string();
    let result = match cli.command {
        Command::GenData => experiment::gen_data(&config).map(|o| {
            println!(
                "wrote {} training and {} held-out observations to {dir}",
                o.train.len(),
                o.heldout.len()
            );
        }),
        Command::Fit => experiment::fit(&config).map(|o| {
            println!(
                "converged in {} iterations; log-likelihood train {:.4}, held-out {}",
                o.fit.iterations_used,
                o.train_log_likelihood,
                o.heldout_log_likelihood
                    .map_or("NA".into(), |v| format!("{v:.4}"))
            );
        }),
        Command::Calibrate => experiment::calibrate(&config).map(|o| {
            println!(
                "{} of {} pool prompts are hard; taus {:?}",
                o.hard_count,
                o.reports.len(),
                o.schedule.taus
            );
        }),
        Command::Run => experiment::run(&config).map(|o| {
            for s in &o.modes {
                println!(
                    "{:<11} fp {:>5}  mean reward {:.4}  mean generations {:.2}  abstained {}",
                    s.mode, s.metrics.fp, s.mean_true_reward, s.mean_generations, s.abstain_count
                );
            }
        }),
        Command::Full => experiment::full(&config).map(|_| {
            println!("all stages complete; artifacts in {dir}");
        }),
        Command::PrintConfig => match serde_json::to_string_pretty(&config.effective()) {
            Ok(json) => {
                println!("{json}");
                Ok(())
            }
            Err(e) => Err(StageError::Failed(e.into())),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `amclab`: dataset generation, training, attacks, ensembles and reports.
//!
//! Every subcommand accepts `--config <file.json>`; flags override the file.
//! `AMCLAB_WORKERS` sets the worker-pool size. Exit codes: 0 success,
//! 2 invalid configuration, 3 numeric failure, 1 I/O failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use amclab::archzoo::ArchId;
use amclab::attacks::AttackKind;
use amclab::labharness::ReportFormat;
use amclab::{Domain, Error, Result, Scheme};
use clap::{Args, Parser, Subcommand};

use config::SplitSel;

#[derive(Parser, Debug)]
#[command(name = "amclab", version, about = "Adversarial modulation-classification lab")]
struct Cli {
    /// Worker threads for crafting and evaluation.
    #[arg(long, global = true, env = "AMCLAB_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArg {
    /// JSON file with this subcommand's settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesise a labelled dataset.
    Gen {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<Scheme>>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        len: Option<usize>,
        #[arg(long)]
        sps: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        snr_db: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Manifest path to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one classifier.
    Train {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        arch: Option<ArchId>,
        #[arg(long)]
        domain: Option<Domain>,
        #[arg(long)]
        width_scale: Option<f64>,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Craft perturbations on a model and save the perturbed split.
    Attack {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        kind: Option<AttackKind>,
        #[arg(long, allow_hyphen_values = true)]
        pnr_db: Option<f64>,
        #[arg(long)]
        power: Option<f64>,
        #[arg(long)]
        bim_alpha_fraction: Option<f64>,
        #[arg(long)]
        bim_iterations: Option<usize>,
        #[arg(long)]
        split: Option<SplitSel>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy and confusion matrix of a model or ensemble.
    Eval {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, conflicts_with = "ensemble")]
        model: Option<PathBuf>,
        #[arg(long)]
        ensemble: Option<PathBuf>,
        #[arg(long)]
        split: Option<SplitSel>,
    },
    /// Build an assorted deep ensemble.
    Ensemble {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        arch_ids: Option<Vec<ArchId>>,
        #[arg(long)]
        copies: Option<usize>,
        #[arg(long)]
        sigma_iq: Option<f64>,
        #[arg(long)]
        sigma_dft: Option<f64>,
        #[arg(long)]
        include_clean: Option<bool>,
        #[arg(long)]
        width_scale: Option<f64>,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate an ensemble and single-model baselines on a (perturbed) split.
    DefendEval {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        ensemble: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        baselines: Option<Vec<PathBuf>>,
        #[arg(long)]
        split: Option<SplitSel>,
    },
    /// Run the desk-scale lab, or re-emit a saved report.
    Report {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        width_scale: Option<f64>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        copies: Option<usize>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        pnr_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<AttackKind>>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        formats: Option<Vec<ReportFormat>>,
        #[arg(long)]
        from: Option<PathBuf>,
    },
}

fn set_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Config("worker count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    set_workers(cli.workers)?;
    commands::dispatch(cli.command)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use omgrl_cli::{
    evaluate_cmd, gen_data, ingest, report_cmd, train_cmd, train_dynamics_cmd, CommonArgs,
    EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION,
};
use omgrl_core::error::Error;

/// Offline model-based guided reward learning over dosing trajectories.
#[derive(Parser)]
#[command(name = "omgrl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (key=value, OMGRL-CFG v1).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Force fully deterministic single-threaded execution.
    #[arg(long)]
    strict: bool,
    /// Output directory (default $OMGRL_OUT or ./omgrl-out).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl From<Common> for CommonArgs {
    fn from(c: Common) -> Self {
        CommonArgs { config: c.config, sets: c.sets, seed: c.seed, strict: c.strict, out: c.out }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic expert dataset (CSV + bin edges + env config).
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Validate, split and normalize a trajectory CSV.
    Ingest {
        /// Trajectory CSV (falls back to config data.csv).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Bin-edges file to reuse instead of fitting quantiles.
        #[arg(long)]
        edges: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the probabilistic dynamics ensemble.
    TrainDynamics {
        /// Ingested dataset directory.
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a policy (train.mode selects omgrl / combo / modelfree).
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Dynamics checkpoint (required unless model-free).
        #[arg(long)]
        dynamics: Option<PathBuf>,
        /// Resume from a saved run directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a trained run: returns, WIS, success, agreement, tendencies.
    Evaluate {
        /// Run directory produced by `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Dynamics checkpoint for model-space evaluation.
        #[arg(long)]
        dynamics: Option<PathBuf>,
        /// Synthetic env config for ground-truth evaluation.
        #[arg(long)]
        env: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Merge evaluation artifacts into a plot-ready long-format CSV.
    Report {
        /// Directory produced by `evaluate`.
        #[arg(long)]
        eval_dir: PathBuf,
        /// Training output directory (adds the metric curves).
        #[arg(long)]
        run: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code_for(err: &Error) -> i32 {
    if err.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_VALIDATION
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage/help text; usage errors exit 1 per the interface contract.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { ExitCode::from(EXIT_OK as u8) } else { ExitCode::from(EXIT_VALIDATION as u8) };
        }
    };

    let result: Result<i32, Error> = match cli.command {
        Command::GenData { common } => gen_data(&common.into()).map(|()| EXIT_OK),
        Command::Ingest { data, edges, common } => {
            ingest(&common.into(), data, edges).map(|()| EXIT_OK)
        }
        Command::TrainDynamics { dataset, common } => {
            train_dynamics_cmd(&common.into(), &dataset).map(|()| EXIT_OK)
        }
        Command::Train { dataset, dynamics, resume, common } => {
            train_cmd(&common.into(), &dataset, dynamics.as_deref(), resume.as_deref())
                .map(|aborted| if aborted.is_some() { EXIT_NUMERIC } else { EXIT_OK })
        }
        Command::Evaluate { run, dataset, dynamics, env, common } => {
            evaluate_cmd(&common.into(), &run, &dataset, dynamics.as_deref(), env.as_deref())
                .map(|()| EXIT_OK)
        }
        Command::Report { eval_dir, run, common } => {
            report_cmd(&common.into(), &eval_dir, run.as_deref()).map(|()| EXIT_OK)
        }
    };

    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Open-set intrusion detection with reciprocal points.
///
/// Log verbosity follows `RPMNET_LOG` (error, warn, info, debug, trace;
/// default info).
#[derive(Debug, Parser)]
#[command(name = "rpmnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split, normalize and train; writes an uncalibrated bundle.
    Train {
        /// Flow CSV, or a directory of CSVs with the same columns.
        #[arg(long)]
        data: PathBuf,
        /// Roles file assigning every class a role.
        #[arg(long)]
        roles: PathBuf,
        /// Training config (TOML); flags below override its keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Bundle path. History and manifest are written beside it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Fisher weight; 0 trains plain RPM-Net.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Choose τ on validation-unknown classes; writes a new bundle.
    Calibrate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        roles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate on known-test and test-unknown classes.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        roles: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Append predicted_label, score and is_unknown to every row of a CSV.
    Score {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic Gaussian-blob fixture.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Also write a matching roles file here.
        #[arg(long)]
        roles: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Records per unknown cluster.
        #[arg(long, default_value_t = 500)]
        unknown: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RPMNET_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            data,
            roles,
            config,
            out,
            seed,
            epochs,
            lr,
            beta,
        } => commands::train(commands::TrainArgs {
            data,
            roles,
            config,
            out,
            seed,
            epochs,
            lr,
            beta,
        }),
        Command::Calibrate {
            bundle,
            data,
            roles,
            out,
        } => commands::calibrate(&bundle, &data, &roles, &out),
        Command::Eval {
            bundle,
            data,
            roles,
            report,
        } => commands::eval(&bundle, &data, &roles, &report),
        Command::Score { bundle, data, out } => commands::score(&bundle, &data, &out),
        Command::Synth {
            out,
            roles,
            seed,
            unknown,
        } => commands::synth(&out, roles.as_deref(), seed, unknown),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

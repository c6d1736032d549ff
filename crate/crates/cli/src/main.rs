mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use cascnn_core::Error;
use chrono::NaiveDate;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "cascnn", version, about = "Forecast next-interval metro OD matrices from smart-card records")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Write outputs here instead of a new timestamped directory.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic smart-card dataset (afc.csv + manifest.json).
    Synth,
    /// Bin smart-card records into OD tensors and flow series (dataset.json).
    Ingest {
        /// Directory with afc.csv and manifest.json.
        #[arg(long)]
        data: PathBuf,
    },
    /// Sparsity and attraction-degree report plus the loss mask.
    Stats {
        /// Raw directory or an ingest run directory.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one model variant and test it against the historical average.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// full | no_split | no_mask | no_ca | no_inflow | no_outflow | cnn2d
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Evaluate a trained model on its test days.
    Eval {
        /// Training run directory holding model.json and model.bin.
        #[arg(long)]
        model: PathBuf,
        /// Dataset to use instead of the one recorded at training time.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Metrics for each interval of the day.
        #[arg(long)]
        per_interval: bool,
        /// Actual vs predicted series for OD pairs, e.g. `0-5,3-12`.
        #[arg(long, value_name = "O-D,...")]
        pairs: Option<String>,
        /// Station inflow volume against the learned gate weights.
        #[arg(long)]
        interpret: bool,
    },
    /// Predict the OD matrix for one date and interval.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        date: NaiveDate,
        /// Interval start, HH:MM.
        #[arg(long)]
        interval: String,
    },
    /// Merge run reports into one RMSE/MAE/WMAPE table.
    Compare {
        /// Training run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Usage(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let command = Cli::command().after_help(config::help_table());
    let matches = command.get_matches();
    let args = match Cli::from_arg_matches(&matches) {
        Ok(a) => a,
        Err(e) => e.exit(),
    };
    let common = args.common;
    let result = match args.command {
        Command::Synth => commands::synth(&common),
        Command::Ingest { data } => commands::ingest(&common, &data),
        Command::Stats { data } => commands::stats(&common, &data),
        Command::Train { data, ablation } => commands::train(&common, &data, ablation.as_deref()),
        Command::Eval {
            model,
            data,
            per_interval,
            pairs,
            interpret,
        } => commands::eval(
            &common,
            &model,
            data.as_deref(),
            commands::EvalOptions {
                per_interval,
                pairs,
                interpret,
            },
        ),
        Command::Predict {
            model,
            data,
            date,
            interval,
        } => commands::predict(&common, &model, data.as_deref(), date, &interval),
        Command::Compare { runs } => commands::compare(&common, &runs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

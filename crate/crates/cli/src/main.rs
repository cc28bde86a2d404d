//! `fpa`: simulation, jump detection, competition estimation, value
//! recovery and participation diagnostics from the command line.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_m_range, Overrides, RunConfig};
use error::Result;

#[derive(Debug, Parser)]
#[command(name = "fpa", version, about = "First-price auction estimation with unobserved competition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for output files (created if missing).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Input {
    /// Outcome CSV.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Detection {
    #[arg(long)]
    h0: Option<f64>,
    #[arg(long)]
    h1: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Debug, Args)]
struct Estimation {
    /// Top-order range for the tail index, as LO:HI.
    #[arg(long, value_parser = parse_m_range)]
    m_range: Option<(usize, usize)>,
    /// CRRA coefficient in (0, 1].
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    alpha_min: Option<f64>,
    /// Smallest number of bidders.
    #[arg(long)]
    n_lo: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw outcomes from the model in the [simulate] block.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Locate density discontinuities in the winning bids.
    Detect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        detection: Detection,
    },
    /// Competition distribution, value bound, tail index and value quantile.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        detection: Detection,
        #[command(flatten)]
        estimation: Estimation,
    },
    /// Value quantile recovery, optionally from a saved competition.json.
    Recover {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        detection: Detection,
        #[command(flatten)]
        estimation: Estimation,
        #[arg(long)]
        competition: Option<PathBuf>,
    },
    /// Information-regime and reserve-versus-entry tests, then identification.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        detection: Detection,
    },
}

fn overrides(common: &Common, input: Option<&Input>, det: Option<&Detection>, est: Option<&Estimation>) -> Overrides {
    Overrides {
        input: input.and_then(|i| i.input.clone()),
        out_dir: common.out_dir.clone(),
        h0: det.and_then(|d| d.h0),
        h1: det.and_then(|d| d.h1),
        epsilon: det.and_then(|d| d.epsilon),
        m_range: est.and_then(|e| e.m_range),
        theta: est.and_then(|e| e.theta),
        alpha_min: est.and_then(|e| e.alpha_min),
        n_lo: est.and_then(|e| e.n_lo),
        seed: None,
    }
}

fn configure(common: &Common, o: Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply(&o);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { common, seed } => {
            let o = Overrides { seed: *seed, ..overrides(common, None, None, None) };
            commands::cmd_simulate(&configure(common, o)?)
        }
        Command::Detect { common, input, detection } => {
            commands::cmd_detect(&configure(common, overrides(common, Some(input), Some(detection), None))?)
        }
        Command::Estimate { common, input, detection, estimation } => {
            let o = overrides(common, Some(input), Some(detection), Some(estimation));
            commands::cmd_estimate(&configure(common, o)?)
        }
        Command::Recover { common, input, detection, estimation, competition } => {
            let o = overrides(common, Some(input), Some(detection), Some(estimation));
            commands::cmd_recover(&configure(common, o)?, competition.as_deref())
        }
        Command::Diagnose { common, input, detection } => {
            commands::cmd_diagnose(&configure(common, overrides(common, Some(input), Some(detection), None))?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

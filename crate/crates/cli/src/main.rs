mod commands;
mod compare;
mod error;
mod output;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Objective, SimOverrides};
use crate::error::CliResult;
use crate::output::{emit, Format};
use crate::scenario::{PolicyKind, Scenario};

/// Playout-rate analysis, resource allocation and simulation for live video
/// over block-scheduled cellular downlinks.
#[derive(Debug, Parser)]
#[command(name = "livecap", version)]
struct Cli {
    /// Suppress progress messages on standard error.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Directory for the report; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate per-user rate PMFs from a signal trace.
    Ingest {
        /// CSV with header timestamp_ms,user_id,rssi_dbm (or sinr_db).
        #[arg(long)]
        trace: PathBuf,
        /// MCS table JSON; the built-in 15-level table when omitted.
        #[arg(long)]
        mcs: Option<PathBuf>,
        /// RSSI-to-SINR mapping JSON; built-in anchors when omitted.
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// Directory receiving one PMF file per user.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Maximum constant playout rate of every user at its static share.
    Analyze {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's outage target.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Override the scenario's drop target.
        #[arg(long)]
        delta0: Option<f64>,
        /// Include the occupancy distribution and PGF roots of each solution.
        #[arg(long)]
        full: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Frame allocation for one of the operator objectives.
    Allocate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        objective: Objective,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Frame-level simulation of every user.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, value_enum)]
        policy: Option<PolicyKind>,
        /// Also dump every frame of the first replication per user (large).
        #[arg(long)]
        frames_dir: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Side-by-side comparison of per-user reports.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest {
            trace,
            mcs,
            mapping,
            out,
            format,
        } => {
            let report = commands::ingest(&trace, mcs.as_deref(), mapping.as_deref(), &out)?;
            emit(&report, "ingest", None, format)
        }
        Command::Analyze {
            scenario,
            epsilon,
            delta0,
            full,
            output,
        } => {
            let mut sc = Scenario::load(&scenario)?;
            sc.epsilon = epsilon.unwrap_or(sc.epsilon);
            sc.delta0 = delta0.unwrap_or(sc.delta0);
            let report = commands::analyze(&sc, full)?;
            emit(&report, "analyze", output.out.as_deref(), output.format)
        }
        Command::Allocate {
            scenario,
            objective,
            output,
        } => {
            let sc = Scenario::load(&scenario)?;
            let report = commands::allocate(&sc, objective)?;
            emit(&report, "allocate", output.out.as_deref(), output.format)
        }
        Command::Simulate {
            scenario,
            seed,
            runs,
            frames,
            policy,
            frames_dir,
            output,
        } => {
            let sc = Scenario::load(&scenario)?;
            let overrides = SimOverrides {
                seed,
                runs,
                frames,
                policy,
            };
            let report = commands::simulate_users(&sc, overrides, frames_dir.as_deref())?;
            emit(&report, "simulate", output.out.as_deref(), output.format)
        }
        Command::Compare { reports, output } => {
            let report = compare::compare(&reports)?;
            let s = &report.summary;
            log::info!(
                "max |delta U| {:.6e} b/s ({:.4}%), max |delta outage| {:.6}, max |delta drop| {:.6}",
                s.max_abs_delta_rate_bps,
                100.0 * s.max_abs_rel_delta_rate,
                s.max_abs_delta_outage,
                s.max_abs_delta_drop
            );
            emit(&report, "compare", output.out.as_deref(), output.format)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}

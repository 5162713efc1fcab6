//! Batch front-end: `synthesize`, `verify`, `simulate` and `reproduce-vdp`.
//!
//! Exit codes: 0 success, 1 verification or simulation failure, 2 unusable
//! input (arguments, config, missing or malformed files), 3 no stability
//! certificate.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use commands::{Overrides, VdpStudy, EXIT_FAILED, EXIT_INPUT, EXIT_NO_CERTIFICATE, EXIT_OK};

#[derive(Debug, Parser)]
#[command(
    name = "pclpv",
    version,
    about = "Polynomial chaos LPV state-feedback synthesis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct OverrideArgs {
    /// Seed for every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Required mean-square decay rate.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Polynomial chaos order.
    #[arg(long)]
    pub order: Option<usize>,
    /// Number of parameter samples for sampled_lpv.
    #[arg(long)]
    pub samples: Option<usize>,
}

impl From<&OverrideArgs> for Overrides {
    fn from(a: &OverrideArgs) -> Self {
        Overrides {
            seed: a.seed,
            alpha: a.alpha,
            order: a.order,
            samples: a.samples,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a controller and write a JSON report.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        /// Report path (defaults to `output.report`, then stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Re-check a synthesis report algebraically and by Monte Carlo.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Simulate a synthesized controller and write the trajectory CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        result: PathBuf,
        /// CSV path (defaults to `output.trajectory`, then stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run the Van der Pol comparison of LTI, sampled LPV and chaos designs.
    ReproduceVdp {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        order: usize,
    },
    /// Solve one scalarized problem read as JSON from stdin.
    #[command(hide = true)]
    SdpBackend {
        #[arg(long)]
        ellipsoid: bool,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Io(_) | Error::Json(_) => EXIT_INPUT,
        Error::NoCertificate { .. } => EXIT_NO_CERTIFICATE,
        _ => EXIT_FAILED,
    }
}

pub fn dispatch(command: Command) -> Result<i32, Error> {
    match command {
        Command::Synthesize {
            config,
            out,
            overrides,
        } => commands::cmd_synthesize(&config, out.as_deref(), &(&overrides).into()),
        Command::Verify {
            config,
            result,
            out,
            overrides,
        } => commands::cmd_verify(&config, &result, out.as_deref(), &(&overrides).into()),
        Command::Simulate {
            config,
            result,
            out,
            overrides,
        } => commands::cmd_simulate(&config, &result, out.as_deref(), &(&overrides).into()),
        Command::ReproduceVdp {
            out,
            seed,
            alpha,
            order,
        } => {
            let study = VdpStudy {
                seed,
                alpha,
                pc_order: order,
                ..VdpStudy::default()
            };
            commands::cmd_reproduce_vdp(&out, &study)
        }
        Command::SdpBackend { ellipsoid } => commands::cmd_sdp_backend(ellipsoid),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

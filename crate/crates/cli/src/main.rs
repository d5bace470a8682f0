//! `hybrid-heat`: spectrum, gap certification, control synthesis, simulation
//! and end-to-end null-control verification from a TOML problem file.
//!
//! Exit codes: 0 success, 2 invalid input, 3 ill-conditioned moment
//! problem, 4 certification failure, 1 anything else.

mod commands;
mod init;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybrid_heat::coeffs::ConfigError;
use hybrid_heat::moments::MomentError;
use hybrid_heat::simulator::SimError;
use hybrid_heat::state::StateError;
use hybrid_heat::{BcVariant, Precision};

use crate::init::InitSpec;
use crate::output::Staging;

/// Bad command-line input that clap cannot catch on its own.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "hybrid-heat", version, about = "Spectral analysis and null control of two heat rods coupled by a point mass")]
pub struct Cli {
    /// Problem description (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, replaced atomically at the end of the run.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed for randomized initial data.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Arithmetic for the moment problem.
    #[arg(long, global = true, default_value = "double")]
    pub precision: Precision,
    /// Overrides the boundary condition of the config.
    #[arg(long, global = true)]
    pub variant: Option<BcVariant>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct ProblemArgs {
    /// Initial state: zero, mode:K, modes:K,L,.., random:K, expr:U;V or file:PATH.
    #[arg(long)]
    pub init: InitSpec,
    /// Number of controlled modes (defaults to the config).
    #[arg(long)]
    pub n_modes: Option<usize>,
    /// Control horizon (defaults to the config).
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalues, interlacing flags and eigenfunctions.
    Spectrum {
        #[arg(long, default_value_t = 30)]
        n_max: usize,
        /// How many eigenfunctions to write as CSV.
        #[arg(long, default_value_t = 4)]
        eigenfunctions: usize,
    },
    /// Spectral gaps and their minimum.
    GapReport {
        #[arg(long, default_value_t = 30)]
        n_max: usize,
    },
    /// Synthesizes the boundary control for the given initial state.
    Control {
        #[command(flatten)]
        problem: ProblemArgs,
    },
    /// Forward simulation with a zero, synthesized or prescribed input.
    Simulate {
        #[command(flatten)]
        problem: ProblemArgs,
        /// zero, control, or expr:H with the variable t.
        #[arg(long, default_value = "zero")]
        input: String,
        /// galerkin, fd or both.
        #[arg(long, default_value = "both")]
        method: String,
        #[arg(long, default_value_t = 256)]
        nx: usize,
        #[arg(long, default_value_t = 4096)]
        nt: usize,
    },
    /// Synthesizes the control and checks it with both simulators.
    Verify {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 256)]
        nx: usize,
        #[arg(long, default_value_t = 4096)]
        nt: usize,
        /// Uncontrolled modes used for the tail estimate.
        #[arg(long, default_value_t = 24)]
        extra_modes: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectrum { .. } => "spectrum",
            Command::GapReport { .. } => "gap-report",
            Command::Control { .. } => "control",
            Command::Simulate { .. } => "simulate",
            Command::Verify { .. } => "verify",
        }
    }
}

/// Maps an error chain to the documented exit code.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<ConfigError>() || cause.is::<StateError>() {
            return 2;
        }
        let moment = cause.downcast_ref::<MomentError>().or_else(|| match cause.downcast_ref::<SimError>() {
            Some(SimError::Moment(m)) => Some(m),
            _ => None,
        });
        match moment {
            Some(MomentError::Conditioning { .. }) => return 3,
            Some(MomentError::Residual { .. }) => return 4,
            Some(MomentError::BadHorizon(_) | MomentError::BadExponents | MomentError::State(_)) => return 2,
            _ => {}
        }
        if let Some(SimError::State(_) | SimError::Resolution { .. } | SimError::Horizon { .. }) = cause.downcast_ref::<SimError>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut staging = match Staging::create(&cli.out, cli.command.name(), cli.config.as_deref(), cli.seed) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{e:#}"), "exit_code": 1 }));
            return ExitCode::from(1);
        }
    };
    let (status, code) = match commands::run(&cli, &mut staging) {
        Ok(true) => ("ok", 0),
        Ok(false) => ("certification-failed", 4),
        Err(e) => {
            let code = exit_code(&e);
            let record = serde_json::json!({
                "error": format!("{e:#}"),
                "chain": e.chain().map(|c| c.to_string()).collect::<Vec<_>>(),
                "exit_code": code,
            });
            eprintln!("{record}");
            if let Err(w) = staging.write_json("error.json", &record) {
                eprintln!("could not write error record: {w:#}");
            }
            ("error", code)
        }
    };
    match staging.finish(status, code) {
        Ok(dir) => log::info!("wrote {}", dir.display()),
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{e:#}"), "exit_code": 1 }));
            return ExitCode::from(1);
        }
    }
    ExitCode::from(code)
}

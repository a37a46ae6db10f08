//! Command-line front end: four subcommands over the library, each
//! emitting a JSON report that embeds its fully resolved configuration.
//! Re-running a report's config reproduces its results bit-for-bit under
//! the same build.
//!
//! Exit codes: 0 success, 1 a property audit reported FAIL, 2 usage or
//! input error, 3 a computation aborted (tolerance, convergence,
//! integrability, or a violated precondition).

mod commands;
mod config;
mod parsers;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.globals.threads {
        // Affects speed only; all reductions use fixed orders.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match commands::run(&cli) {
        Ok(commands::Outcome::Clean) => ExitCode::SUCCESS,
        Ok(commands::Outcome::CheckFailed) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code())
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gexpect",
    version,
    about = "Nonlinear expectations: solve, recover, decompose, check"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub globals: GlobalArgs,
}

/// Flags shared by every subcommand. All are optional so that the layering
/// (defaults, then config file, then an embedded report config, then
/// explicit flags) can tell "absent" from "default".
#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; explicit flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Re-run the resolved configuration embedded in a previous report.
    /// Explicit flags still win; everything else replays exactly.
    #[arg(long, global = true, value_name = "REPORT")]
    pub from_report: Option<PathBuf>,

    /// Seed for all sampling; the GEXPECT_SEED environment variable
    /// overrides every other source.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Primary tolerance of the subcommand (quadrature for solve,
    /// stopping for decompose, comparison for check).
    #[arg(long, global = true)]
    pub tol: Option<f64>,

    /// Terminal horizon T.
    #[arg(long, global = true)]
    pub horizon: Option<f64>,

    /// Uniform grid resolution for gridded computations.
    #[arg(long, global = true)]
    pub grid_steps: Option<usize>,

    /// Monte Carlo sample count.
    #[arg(long, global = true)]
    pub mc_samples: Option<usize>,

    /// Worker thread count (0 = automatic). Never changes values.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Report destination; stdout when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub output: Option<PathBuf>,

    /// Suppress the human-readable summary on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form, prescribed-volatility, and entropic values.
    Solve(SolveArgs),
    /// Extract a driver table from an expectation oracle and verify it.
    Recover(RecoverArgs),
    /// Split a deterministic supermartingale into drift and compensator.
    Decompose(DecomposeArgs),
    /// Run property audit suites; FAIL verdicts exit nonzero.
    Check(CheckArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Recover(_) => "recover",
            Command::Decompose(_) => "decompose",
            Command::Check(_) => "check",
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct SolveArgs {
    /// Driver, e.g. zero | linear:mu=0.5 | negative:mu=0.5 |
    /// quadratic:nu=0.5 (append ,d=2 for more noise dimensions).
    #[arg(long)]
    pub gen: Option<String>,

    /// Terminal payoff y + z·(B_v − B_u), e.g. y=1,z=2,u=0.2,v=0.8.
    /// Multi-dimensional z uses bars: z=1|2. u, v default to 0, T.
    #[arg(long)]
    pub terminal: Option<String>,

    /// Evaluation times, comma-separated (default 0).
    #[arg(long)]
    pub t: Option<String>,

    /// Entropic Monte Carlo mode, e.g. nu=0.5.
    #[arg(long)]
    pub entropic: Option<String>,

    /// Also solve the prescribed-volatility equation (volatility = the
    /// terminal's increment window) and report the φ table.
    #[arg(long)]
    pub phi: bool,

    /// Recover the driver value at the first evaluation time from
    /// shrinking windows of these widths, e.g. 0.1,0.05,0.025.
    #[arg(long)]
    pub invariant: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct RecoverArgs {
    /// Oracle: builtin:<driver spec> or csv:<file of t,z,G samples>.
    #[arg(long)]
    pub oracle: Option<String>,

    /// Second oracle; adds a driver-order comparison to the report.
    #[arg(long)]
    pub oracle2: Option<String>,

    /// Radius of the sampled volatility axis grid.
    #[arg(long)]
    pub zmax: Option<f64>,

    /// Axis samples per sign and dimension.
    #[arg(long)]
    pub z_per_axis: Option<usize>,

    /// Extra random directions inside the ball.
    #[arg(long)]
    pub z_random: Option<usize>,

    /// Verify the recovered table against the oracle on random terminals.
    #[arg(long)]
    pub verify: bool,

    /// Sample count for --verify.
    #[arg(long)]
    pub samples: Option<usize>,

    /// Value tolerance for --verify and --oracle2 ordering (finite-
    /// difference recovery error sets the floor; default 1e-6).
    #[arg(long)]
    pub verify_tol: Option<f64>,

    /// Also write the recovered table as CSV to this path.
    #[arg(long, value_name = "FILE")]
    pub table_out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct DecomposeArgs {
    /// Path: drift:c=1 (ψ = −c·t) | kink:c=1,at=0.5 (ψ = −c·(t−at)⁺) |
    /// csv:<file of t,psi samples>.
    #[arg(long)]
    pub psi: Option<String>,

    /// Driver for the drift part (default zero).
    #[arg(long)]
    pub gen: Option<String>,

    /// Volatility row fed to the driver, e.g. 0.3 or 1|0.5 (default 0).
    #[arg(long)]
    pub z: Option<String>,

    /// Penalty schedule, comma-separated (default 1,2,4,…,2^20).
    #[arg(long)]
    pub m_schedule: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct CheckArgs {
    /// Suites: axioms | structure | comparison | convexity | domination |
    /// meanfield | all (runs every suite its inputs allow).
    #[arg(long)]
    pub suite: Option<String>,

    /// Oracle for axioms/structure: builtin:<driver spec>.
    #[arg(long)]
    pub oracle: Option<String>,

    /// Driver under audit.
    #[arg(long)]
    pub gen: Option<String>,

    /// Second driver (comparison: the pointwise-smaller one).
    #[arg(long)]
    pub gen2: Option<String>,

    /// Negate the driver given by --gen.
    #[arg(long)]
    pub negated: bool,

    /// Restrict the convexity suite: concavity | superadditivity |
    /// positive-homogeneity | all.
    #[arg(long)]
    pub property: Option<String>,

    /// Terminal-class radius for domination.
    #[arg(long)]
    pub k: Option<f64>,

    /// Scale on the driver's natural modulus for domination.
    #[arg(long)]
    pub rho_scale: Option<f64>,

    /// Samples per property.
    #[arg(long)]
    pub samples: Option<usize>,

    /// Radius of the sampled volatility ball.
    #[arg(long)]
    pub z_radius: Option<f64>,

    /// Terminals for the mean-field suite, same syntax as solve.
    #[arg(long)]
    pub terminal: Option<String>,
    #[arg(long)]
    pub terminal2: Option<String>,
}

//! `eadyn`: generate, partition, and run spin-glass block dynamics from the
//! command line. Every file-producing command writes a `.manifest.json`
//! sidecar recording the parameters and seeds that produced it.
//!
//! Exit codes: 0 success, 1 a validation or property check failed (or a
//! data file was unreadable), 2 usage errors and size-cap violations.

mod args;
mod commands;
mod manifest;

use clap::{Parser, Subcommand};
use eadyn_core::error::Error;

use crate::args::*;

#[derive(Parser)]
#[command(
    name = "eadyn",
    version,
    about = "Spin-glass block dynamics: sampling, partitions, and diagnostics"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance and write it to a file.
    Gen(GenArgs),
    /// Per-vertex influence diagnostics and structural checks for an instance.
    Analyze(AnalyzeArgs),
    /// Build and validate a block partition, or report the witness that
    /// prevented one.
    Partition(PartitionArgs),
    /// Run single-site or block dynamics and record a trace.
    Run(RunArgs),
    /// Coupled-chain experiments: one-step contraction or full coalescence.
    Couple(CoupleArgs),
    /// Exact spectral diagnostics for small instances.
    Spectral(SpectralArgs),
    /// Numerical checks of the probabilistic bounds.
    #[command(subcommand)]
    Bounds(BoundsCommand),
    /// Run the acceptance criteria.
    Verify(VerifyArgs),
}

#[derive(Subcommand)]
enum BoundsCommand {
    /// Concentration of a sum of folded Gaussians around its mean.
    HalfNormal(HalfNormalArgs),
    /// Linear upper bound on the Gaussian CDF on a grid.
    Phi(PhiArgs),
    /// Tail bound for the aggregate influence at a vertex.
    Aggregate(AggregateArgs),
    /// Expected edge influence by quadrature, optionally cross-checked by
    /// Monte Carlo.
    InfluenceMean(InfluenceMeanArgs),
}

fn dispatch(cli: &Cli) -> eadyn_core::error::Result<i32> {
    match &cli.command {
        Command::Gen(a) => commands::cmd_gen(a),
        Command::Analyze(a) => commands::cmd_analyze(a),
        Command::Partition(a) => commands::cmd_partition(a),
        Command::Run(a) => commands::cmd_run(a),
        Command::Couple(a) => commands::cmd_couple(a),
        Command::Spectral(a) => commands::cmd_spectral(a),
        Command::Bounds(b) => match b {
            BoundsCommand::HalfNormal(a) => commands::cmd_bounds_half_normal(a),
            BoundsCommand::Phi(a) => commands::cmd_bounds_phi(a),
            BoundsCommand::Aggregate(a) => commands::cmd_bounds_aggregate(a),
            BoundsCommand::InfluenceMean(a) => commands::cmd_bounds_influence_mean(a),
        },
        Command::Verify(a) => commands::cmd_verify(a),
    }
}

fn main() {
    // Die silently when a downstream pipe closes (`eadyn ... | head`), like
    // any other line-oriented tool, instead of panicking on EPIPE.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        // Ignore failure: the global pool can only be configured once, and a
        // second attempt (e.g. under a test harness) should not kill the run.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match dispatch(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::InvalidParameter(_) | Error::CapExceeded(_) => 2,
                _ => 1,
            };
            std::process::exit(code);
        }
    }
}

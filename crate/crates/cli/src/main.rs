use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod run;

use commands::{Overrides, Suite, VerifyOptions};

/// Penalization solver and Monte Carlo checks for controller-stopper games.
///
/// Every command writes into a fresh directory under --out named by the
/// config hash and a timestamp. Exit status: 0 success, 1 a validation or
/// asserted bound failed, 2 a solver did not converge, 3 I/O or parse error.
#[derive(Parser)]
#[command(name = "ctrlstop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Problem file (TOML), or the name of a bundled problem.
    #[arg(long)]
    config: String,
    /// Parent directory of the run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args, Clone, Default)]
struct SolveFlags {
    /// Penalty schedule "eps0,delta0,K" (both halve K-1 times).
    #[arg(long, value_parser = commands::parse_schedule)]
    schedule: Option<(f64, f64, usize)>,
    /// Grid "m,nx,nt": truncation radius, nodes per axis, time steps.
    #[arg(long, value_parser = commands::parse_grid)]
    grid: Option<(f64, usize, usize)>,
    /// Nonlinear solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct PathFlags {
    /// Monte Carlo paths per estimate.
    #[arg(long)]
    paths: Option<usize>,
    /// Time steps per path.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions on sampled points.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the continuation and write fields, VI diagnostics and region maps.
    Solve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solve: SolveFlags,
        /// Also solve the pure stopping problem and report the distance to it.
        #[arg(long)]
        oracle: bool,
    },
    /// Monte Carlo estimates under the feedback strategies of a solved field.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// `field.bin` from a solve run.
        #[arg(long)]
        field: PathBuf,
        #[command(flatten)]
        paths: PathFlags,
        /// Skip the saddle-point probes.
        #[arg(long)]
        no_probes: bool,
    },
    /// Run the invariant suites (all bundled problems when --config is absent).
    Verify {
        #[arg(long)]
        config: Option<String>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[command(flatten)]
        solve: SolveFlags,
        #[command(flatten)]
        paths: PathFlags,
        /// Suites to run.
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Suite::Model, Suite::Kernel, Suite::Oracle, Suite::Manufactured, Suite::Pde, Suite::Sim])]
        suites: Vec<Suite>,
        /// Random cases per kernel invariant.
        #[arg(long, default_value_t = 100_000)]
        cases: usize,
        /// Fault injection: check the penalty invariants against a broken bridge.
        #[arg(long, hide = true)]
        corrupt_bridge: bool,
    },
    /// Solve on several grids and report how the limit changes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid "m,nx,nt"; repeat for each grid.
        #[arg(long = "grid", value_parser = commands::parse_grid, required = true)]
        grids: Vec<(f64, usize, usize)>,
        #[arg(long, value_parser = commands::parse_schedule)]
        schedule: Option<(f64, f64, usize)>,
        #[arg(long)]
        tol: Option<f64>,
    },
}

fn overrides(solve: &SolveFlags, paths: &PathFlags) -> Overrides {
    Overrides {
        schedule: solve.schedule,
        grid: solve.grid,
        tol: solve.tol,
        paths: paths.paths,
        steps: paths.steps,
        seed: paths.seed,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { common } => commands::validate(&common.config, &common.out),
        Command::Solve { common, solve, oracle } => {
            commands::solve(&common.config, &overrides(&solve, &PathFlags::default()), oracle, &common.out)
        }
        Command::Simulate {
            common,
            field,
            paths,
            no_probes,
        } => commands::simulate(
            &common.config,
            &field,
            &overrides(&SolveFlags::default(), &paths),
            !no_probes,
            &common.out,
        ),
        Command::Verify {
            config,
            out,
            solve,
            paths,
            suites,
            cases,
            corrupt_bridge,
        } => {
            let opts = VerifyOptions {
                suites,
                cases,
                corrupt_bridge,
            };
            commands::verify(config.as_deref(), &overrides(&solve, &paths), &opts, &out)
        }
        Command::Sweep {
            common,
            grids,
            schedule,
            tol,
        } => {
            let ov = Overrides {
                schedule,
                tol,
                ..Overrides::default()
            };
            commands::sweep(&common.config, &grids, &ov, &common.out)
        }
    };
    match outcome {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

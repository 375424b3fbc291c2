//! `ofo`: analysis reports, closed-loop simulations, figure presets and DC-grid sweeps.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ofo_core::ConstantConvention;

use crate::config::Overrides;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ofo", version, about = "Online feedback optimization of networked LTI systems")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Constant convention used for pass/fail decisions.
    #[arg(long, global = true, value_parser = parse_convention)]
    convention: Option<ConstantConvention>,
    #[command(subcommand)]
    command: Command,
}

fn parse_convention(s: &str) -> Result<ConstantConvention, String> {
    s.parse().map_err(|e: ofo_core::OfoError| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certificates under both constant conventions (JSON on stdout).
    /// Exits 1 unless the coupling condition holds and eta is admissible.
    Analyze,
    /// Run the configured closed loop.
    Simulate,
    /// Reproduce a figure preset.
    Figures {
        #[command(subcommand)]
        preset: Figure,
    },
    /// DC power-grid case study.
    Grid {
        #[command(subcommand)]
        action: GridAction,
    },
}

#[derive(Debug, Subcommand)]
enum Figure {
    /// Centralized and decentralized runs, algebraic and dynamic, at G = 1.
    Fig3,
    /// Sub-optimality over a conductance sweep.
    Fig4(SweepOpts),
}

#[derive(Debug, Subcommand)]
enum GridAction {
    /// Write the grid spec, discretized plant and sensitivity.
    Build,
    /// Run the configured loop on the grid.
    Simulate,
    /// Sweep the uniform node conductance.
    Sweep(SweepOpts),
}

#[derive(Debug, Args)]
struct SweepOpts {
    /// Comma-separated conductance values.
    #[arg(long, value_delimiter = ',')]
    g: Option<Vec<f64>>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Evaluate sweep rows concurrently.
    #[arg(long)]
    parallel: bool,
}

impl From<SweepOpts> for commands::SweepArgs {
    fn from(o: SweepOpts) -> Self {
        commands::SweepArgs {
            g: o.g,
            eta: o.eta,
            steps: o.steps,
            parallel: o.parallel,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        convention: cli.convention,
    };
    let loaded = config::load(cli.config.as_deref(), &overrides)?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::Analyze => {
            if commands::analyze(&loaded, out)? {
                Ok(())
            } else {
                Err(CliError::Numerical("certificate failed: coupling condition violated or step size not admissible".into()))
            }
        }
        Command::Simulate => commands::simulate(&loaded, &commands::out_dir(out, None), false),
        Command::Figures { preset: Figure::Fig3 } => commands::figure3(&loaded, &commands::out_dir(out, Some("fig3"))),
        Command::Figures { preset: Figure::Fig4(opts) } => commands::sweep(
            &loaded,
            &commands::out_dir(out, Some("fig4")),
            &opts.into(),
            "fig4",
            "figures fig4",
        )
        .map(drop),
        Command::Grid { action: GridAction::Build } => commands::grid_build(&loaded, &commands::out_dir(out, None)),
        Command::Grid { action: GridAction::Simulate } => commands::simulate(&loaded, &commands::out_dir(out, None), true),
        Command::Grid { action: GridAction::Sweep(opts) } => {
            commands::sweep(&loaded, &commands::out_dir(out, None), &opts.into(), "sweep", "grid sweep").map(drop)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ofo: {e}");
            e.exit_code()
        }
    }
}

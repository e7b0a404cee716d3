use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dnnmpc_cli::commands::{self, Workspace};
use dnnmpc_cli::config::RunConfig;
use dnnmpc_cli::Failure;

/// Mild-HEV torque-split pipeline: DP equivalence factor, NMPC, and a
/// neural network distilled from it.
#[derive(Parser)]
#[command(name = "dnnmpc", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "dnnmpc.toml")]
    config: PathBuf,
    /// Override one config key, e.g. `--set nmpc.horizon=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the trained and held-out cycle family from the route.
    Synth,
    /// Solve the DP on the mean trained cycle and fit the equivalence factor.
    DpLambda,
    /// Run one controller over a cycle.
    Simulate {
        /// rule, nmpc or policy
        #[arg(long)]
        controller: String,
        /// Cycle CSV (time_s,speed_mps); defaults to the benchmark cycle.
        #[arg(long)]
        cycle: Option<PathBuf>,
    },
    /// Roll NMPC over the trained cycles and record the training set.
    Collect,
    /// Structure search and Levenberg-Marquardt training of the policy.
    Train,
    /// Approximation error and per-cycle comparison of all controllers.
    Eval,
    /// Per-step decision time of each controller.
    Bench,
    /// Compare two simulation summaries.
    Diff { a: PathBuf, b: PathBuf },
    /// Print the effective configuration.
    Config,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Diff { a, b } = &cli.command {
        print!("{}", commands::diff(a, b)?);
        return Ok(());
    }
    let cfg = RunConfig::load(&cli.config, &cli.overrides)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let ws = Workspace::open(cfg)?;
    match &cli.command {
        Command::Synth => commands::synth(&ws).map(drop),
        Command::DpLambda => commands::dp_lambda(&ws).map(drop),
        Command::Simulate { controller, cycle } => commands::simulate(&ws, controller, cycle.as_deref()).map(drop),
        Command::Collect => commands::collect(&ws).map(drop),
        Command::Train => commands::train(&ws).map(drop),
        Command::Eval => commands::eval(&ws).map(drop),
        Command::Bench => commands::bench(&ws).map(drop),
        Command::Diff { .. } | Command::Config => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

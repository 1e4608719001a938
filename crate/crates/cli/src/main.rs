use std::path::PathBuf;
use std::process::ExitCode;

use bilevel_kit::{checkgrad, reproduce, run, CliError, ExperimentConfig, Runtime};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "bilevel-kit",
    version,
    about = "Bi-level solvers with unrolled hypergradients"
)]
struct Cli {
    /// Output directory for traces.
    #[arg(long, global = true, env = "BILEVEL_KIT_OUT")]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent solves.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the configured problem with each listed scheme.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a canned experiment: counterexample-init, counterexample-K, alpha-ablation, hyperclean-synth.
    Reproduce { name: String },
    /// Finite-difference checks of the oracles and hypergradients.
    Checkgrad {
        #[arg(long)]
        config: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let rt = Runtime {
        out_dir: cli.out,
        seed: cli.seed,
        threads: cli.threads,
    };
    match cli.command {
        Command::Run { config } => run(&ExperimentConfig::load(&config)?, &rt).map(|_| ()),
        Command::Reproduce { name } => reproduce(&name, &rt).map(|_| ()),
        Command::Checkgrad { config } => {
            checkgrad(&ExperimentConfig::load(&config)?, &rt).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                bilevel_kit::EXIT_CONFIG
            } else {
                bilevel_kit::EXIT_OK
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

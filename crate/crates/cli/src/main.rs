//! `polarsfp`: polarimetric shape-from-polarization toolkit.
//!
//! Subcommands cover the full pipeline: decomposing and synthesizing
//! polarizer stacks, rendering synthetic scenes, physics-based solving,
//! depth-based ground-truth preparation, viewing encodings, training and
//! running the network, evaluation, and Fresnel lookup tables.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "polarsfp", version, about = "Shape-from-polarization toolkit")]
struct Cli {
    /// Seed for all randomness (training shuffles, crops, initialization).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap the worker thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report errors as JSON on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose four polarizer images into Stokes-derived maps.
    Decompose(commands::DecomposeArgs),
    /// Synthesize a polarizer stack from intensity, DoP, and AoP maps.
    Synth(commands::SynthArgs),
    /// Render a synthetic scene through the polarimetric forward model.
    Render(commands::RenderArgs),
    /// Physics-based per-pixel normal estimation from a polarizer stack.
    Solve(commands::SolveArgs),
    /// Prepare ground-truth normals from a burst of depth frames.
    Prep(commands::PrepArgs),
    /// Emit a per-pixel viewing encoding.
    EncodeView(commands::EncodeViewArgs),
    /// Train the network on rendered samples.
    Train(commands::TrainArgs),
    /// Run a trained network on a polarizer stack.
    Infer(commands::InferArgs),
    /// Angular-error metrics between two normal maps.
    Eval(commands::EvalArgs),
    /// CSV table of the DoP curve for one reflection type.
    FresnelTable(commands::FresnelTableArgs),
}

/// Failure classes mapped to exit codes: input problems exit 1, numerical
/// failures exit 2.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    fn numerical(msg: impl Into<String>) -> Self {
        CliError::Numerical(msg.into())
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Numerical(_) => "numerical",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => m,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes; anything else is an
            // input error (exit 1) with the usage text.
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(threads) = cli.threads {
        // A second initialization attempt (e.g. in tests) is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    let seed = cli.seed;
    let result = match cli.command {
        Command::Decompose(args) => commands::decompose(args),
        Command::Synth(args) => commands::synth(args),
        Command::Render(args) => commands::render(args),
        Command::Solve(args) => commands::solve(args),
        Command::Prep(args) => commands::prep(args),
        Command::EncodeView(args) => commands::encode_view(args),
        Command::Train(args) => commands::train(args, seed),
        Command::Infer(args) => commands::infer(args),
        Command::Eval(args) => commands::eval(args),
        Command::FresnelTable(args) => commands::fresnel_table(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if cli.json_errors {
                eprintln!(
                    "{}",
                    serde_json::json!({ "error": err.message(), "kind": err.kind() })
                );
            } else {
                eprintln!("error ({}): {}", err.kind(), err.message());
            }
            ExitCode::from(err.exit_code())
        }
    }
}

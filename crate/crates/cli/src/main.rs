use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod agent;
mod bench;
mod data;
mod eval;
mod probe;

#[derive(Parser)]
#[command(name = "cxr", version, about = "Chest X-ray findings agent and evaluation workbench")]
struct Cli {
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate findings for scans.
    #[command(subcommand)]
    Agent(agent::AgentCmd),
    /// Train, tune and evaluate linear probes.
    #[command(subcommand)]
    Probe(probe::ProbeCmd),
    /// Benchmarks.
    #[command(subcommand)]
    Bench(bench::BenchCmd),
    /// Blind evaluation service.
    #[command(subcommand)]
    Eval(eval::EvalCmd),
    /// Local stand-in for the grounding and generation backends.
    #[command(subcommand)]
    Stub(eval::StubCmd),
}

/// Exit status for a failed command, by error class.
fn exit_code(err: &anyhow::Error) -> u8 {
    use cxr_core::Error;
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return 1;
    };
    match e.root() {
        Error::InvalidInput(_) | Error::Validation(_) | Error::Format(_) => 3,
        Error::NotFound(_) => 4,
        Error::Backend(_) => 5,
        Error::Diverged { .. } => 6,
        Error::Consistency(_) | Error::Conflict(_) => 7,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        cxr_core::par::Execution::Sequential
    } else {
        cxr_core::par::Execution::Parallel
    };
    let result = match cli.command {
        Command::Agent(c) => agent::run(c, exec),
        Command::Probe(c) => probe::run(c, exec),
        Command::Bench(c) => bench::run(c, exec),
        Command::Eval(c) => eval::run(c),
        Command::Stub(c) => eval::run_stub(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

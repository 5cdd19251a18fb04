//! `regboot`: batch entry points for certification, solving and diagnostics.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regboot::cli::{exit_code, run_file, Command};

#[derive(Parser)]
#[command(name = "regboot", version, about = "Regularity bootstrap toolkit for fourth-order double-divergence equations")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Io {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Sub {
    /// Certify ellipticity of a functional on a region of Hessian space.
    Certify(Io),
    /// Solve the constant-coefficient clamped problem on a ball.
    SolveCc(Io),
    /// Minimize the Hessian energy with clamped boundary data.
    SolveVar(Io),
    /// Bootstrap diagnostics on a solved field.
    Diagnose(Io),
    /// Sampled verification of the iteration lemma.
    LemmaCheck(Io),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, io) = match cli.command {
        Sub::Certify(io) => (Command::Certify, io),
        Sub::SolveCc(io) => (Command::SolveCc, io),
        Sub::SolveVar(io) => (Command::SolveVar, io),
        Sub::Diagnose(io) => (Command::Diagnose, io),
        Sub::LemmaCheck(io) => (Command::LemmaCheck, io),
    };
    let result = run_file(cmd, &io.config, &io.out);
    match &result {
        Ok(o) => println!("{}", o.summary),
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}

//! `oscmdp` command-line tool.
//!
//! Exit codes: 0 success (or `Optimal`), 1 error, 2 `Infeasible`,
//! 3 iteration cap reached.

mod args;
mod compare;
mod generate;
mod manifest;
mod solve;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors, which is taken by `Infeasible`.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let threads = manifest::threads_from_env()?;
    match &cli.command {
        Command::Generate(kind) => generate::run(kind, threads).map(|()| 0),
        Command::Solve(args) => solve::run(args, threads).map(solve::exit_code),
        Command::Compare(args) => compare::run(args, threads).map(|()| 0),
    }
}

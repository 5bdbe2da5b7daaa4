mod args;
mod commands;
mod error;
mod output;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Convergence(a) => commands::convergence(a),
    };
    if let Err(e) = result {
        eprintln!("gasnet: {e}");
        std::process::exit(e.exit_code());
    }
}

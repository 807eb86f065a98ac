//! `stereokd` command-line tool.

mod args;
mod commands;
mod run_manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Distill(a) => commands::distill(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Profile(a) => commands::profile(a),
        Command::ExportTaps(a) => commands::export_taps(a),
        Command::Ablation(a) => commands::ablation(a),
    };
    match result {
        Ok(artifacts) => {
            for p in artifacts {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

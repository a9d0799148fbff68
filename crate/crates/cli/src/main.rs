use std::process::ExitCode;

use clap::Parser;
use fairfactor_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", err.record(cli.command.name()));
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

mod args;
mod commands;
mod manifest;
mod table;

use std::process::ExitCode;

use clap::Parser;
use icpcov::ErrorKind;

use args::Cli;
use manifest::{Manifest, Outcome};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };

    let result = commands::run(&cli.command, cli.seed);
    let (code, outcome) = match result {
        Ok(summary) => (
            0,
            Outcome {
                status: "ok",
                exit_code: 0,
                error: None,
                summary,
            },
        ),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.kind() {
                ErrorKind::Usage => EXIT_USAGE,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numerical => EXIT_NUMERICAL,
            };
            (
                code,
                Outcome {
                    status: "error",
                    exit_code: code as i32,
                    error: Some(e.to_string()),
                    summary: serde_json::Value::Null,
                },
            )
        }
    };

    let config = serde_json::to_value(&cli.command).expect("arguments serialize");
    let m = Manifest {
        tool: "icpcov",
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        seed: cli.seed,
        config,
        outcome,
        timestamp: manifest::now(),
    };
    if let Err(e) = manifest::write(cli.command.out(), &m) {
        eprintln!("warning: could not write run manifest: {e}");
    }
    if code == 0 {
        if let Ok(s) = serde_json::to_string(&m.outcome.summary) {
            println!("{s}");
        }
    }
    ExitCode::from(code)
}

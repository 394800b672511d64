mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use args::{Cli, Command};
use commands::{Failure, EXIT_USAGE};

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("SELEX_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::usage(format!("SELEX_THREADS: `{raw}` is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("SELEX_THREADS: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = init_threads().and_then(|()| match &cli.command {
        Command::Prob(a) => commands::prob(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::SimulateMse(a) => commands::simulate_mse(a),
        Command::BootstrapCi(a) => commands::bootstrap_ci(a),
    });
    let code = match outcome {
        Ok(report) => {
            if cli.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report.json).expect("valid JSON")
                );
            } else {
                print!("{}", report.text);
            }
            report.code
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            if f.code == EXIT_USAGE {
                eprintln!("run with --help for usage");
            }
            if cli.json {
                let doc = json!({ "error": { "code": f.code, "message": f.message } });
                println!(
                    "{}",
                    serde_json::to_string_pretty(&doc).expect("valid JSON")
                );
            }
            f.code
        }
    };
    ExitCode::from(code as u8)
}

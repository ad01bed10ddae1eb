mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::{Cli, Outcome};

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("REIF_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| format!("REIF_THREADS must be a positive integer, got '{v}'"))?;
    if n == 0 {
        return Err("REIF_THREADS must be a positive integer, got 0".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match commands::run(cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Violations(n)) => {
            eprintln!("{n} violation(s) found");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

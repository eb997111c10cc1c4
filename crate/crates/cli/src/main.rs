use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lpsv_cli::{run_scenario, CliError, RunOptions, Scenario};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "lpsv", version, about = "Run credit-portfolio loss scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every task of a scenario and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, env = "LPSV_THREADS")]
        threads: Option<usize>,
        /// Replace every seed: noise = K, particles = K+1, initial = K+2.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Parse and validate a scenario without running it.
    Validate { config: PathBuf },
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Validate { config } => {
            let result = Scenario::load(&config).and_then(|(s, _)| s.validate().map(|_| s));
            match result {
                Ok(s) => {
                    let tasks: Vec<_> = s.planned_tasks().iter().map(|t| t.name()).collect();
                    println!("{}", json!({ "valid": true, "name": s.name, "tasks": tasks }));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Run { config, out, threads, seed_override } => {
            if let Some(n) = threads {
                if n == 0 {
                    return fail(&CliError::Validation("--threads must be at least 1".into()));
                }
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    return fail(&CliError::Runtime(format!("thread pool: {e}")));
                }
            }
            let (scenario, raw) = match Scenario::load(&config) {
                Ok(v) => v,
                Err(e) => return fail(&e),
            };
            match run_scenario(&scenario, &raw, &RunOptions { out, seed_override }) {
                Ok(m) => {
                    println!("{}", json!({ "ok": true, "name": m.name, "files": m.files.len() }));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}

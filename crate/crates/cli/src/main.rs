use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use relspec_cli::inspect::inspect;
use relspec_cli::{run_experiment, verify_suite, ExperimentConfig, Level, VerifyOptions};

#[derive(Parser)]
#[command(name = "relspec", version, about = "Relative spectral invariants for operator pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Fast,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Run the invariant suites.
    Verify {
        #[arg(long, value_enum, default_value = "fast")]
        level: LevelArg,
        /// Worker threads (defaults to rayon's choice).
        #[arg(long)]
        threads: Option<usize>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Summarize a record, CSV file or output directory.
    Inspect { record: PathBuf },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", config.display());
                    return code(3);
                }
            };
            let cfg = match ExperimentConfig::from_toml(&text) {
                Ok(c) => c,
                Err(issue) => {
                    eprintln!("error: stage validate failed (config {}): {}", config.display(), issue.message);
                    return code(1);
                }
            };
            match run_experiment(&cfg, Some(&config)) {
                Ok(summary) => {
                    println!("wrote {} files to {}", summary.manifest.files.len() + 1, summary.output_dir.display());
                    println!("det_rel = {:.12e}", summary.invariants.det_rel);
                    code(0)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    code(e.exit_code())
                }
            }
        }
        Command::Verify { level, threads, json } => {
            let level = match level {
                LevelArg::Fast => Level::Fast,
                LevelArg::Full => Level::Full,
            };
            let report = verify_suite(&VerifyOptions { level, threads, corrupt_quadrature: None });
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.render());
            }
            if report.passed() {
                code(0)
            } else {
                code(2)
            }
        }
        Command::Inspect { record } => match inspect(&record) {
            Ok(text) => {
                print!("{text}");
                code(0)
            }
            Err(e) => {
                eprintln!("error: {e}");
                code(e.kind.exit_code())
            }
        },
    }
}

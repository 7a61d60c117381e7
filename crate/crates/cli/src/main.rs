use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lyapunov_frames_cli::{load_str, run, ConfigIssue};

#[derive(Parser)]
#[command(name = "lyapframe", version, about = "Lyapunov spectra and reduced standard systems from a JSON experiment config")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment in the config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Only validate the config.
        #[arg(long)]
        validate: bool,
    },
    /// Schema and referential checks without computation.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn report(issues: &[ConfigIssue]) {
    let list: Vec<_> = issues.iter().map(|i| serde_json::json!({ "pointer": i.pointer, "message": i.message })).collect();
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "errors": list })).unwrap());
    for i in issues {
        eprintln!("error: {i}");
    }
}

fn load(path: &PathBuf) -> Result<lyapunov_frames_cli::LoadedConfig, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(2)
    })?;
    load_str(&text).map_err(|issues| {
        report(&issues);
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { config } => match load(&config) {
            Ok(_) => {
                report(&[]);
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run { config, output, threads, validate } => {
            let loaded = match load(&config) {
                Ok(l) => l,
                Err(code) => return code,
            };
            if validate {
                report(&[]);
                return ExitCode::SUCCESS;
            }
            let Some(out) = output.or_else(|| loaded.config.output_dir.clone().map(PathBuf::from)) else {
                eprintln!("error: no --output given and the config has no output_dir");
                return ExitCode::from(2);
            };
            match run(&loaded, &out, threads) {
                Ok(m) => {
                    for f in &m.failures {
                        eprintln!("experiment {} failed: {}", f.experiment, f.error);
                    }
                    println!("{} artifacts written to {}", m.artifacts.len(), out.display());
                    if m.succeeded() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}

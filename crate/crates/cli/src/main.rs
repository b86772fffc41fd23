mod config;
mod experiments;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use kinetic_core::acceptance::{run_suite, Suite};
use kinetic_core::parallel::{with_workers, workers_from_env};
use kinetic_core::{Error, Result};
use sha2::{Digest, Sha256};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "kinetic-flow", version, about = "Run kinetic SDE experiments and the acceptance battery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a `key = value` config file.
    Run {
        config: PathBuf,
        /// `key=value` pairs applied on top of the file.
        overrides: Vec<String>,
    },
    /// Run the acceptance battery (`fast` or `full`).
    Acceptance {
        suite: String,
        /// Directory for per-criterion CSVs.
        #[arg(long, default_value = "acceptance-output")]
        output: PathBuf,
    },
}

/// Git-style blob hash (`blob <len>\0<bytes>`), using SHA-256.
fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn run(path: &Path, overrides: &[String]) -> Result<()> {
    let started = Instant::now();
    let text = std::fs::read_to_string(path).map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))?;
    let mut config = ExperimentConfig::parse(&text)?;
    config.apply_overrides(overrides)?;
    config.experiment()?;
    config.seed()?;
    let out = PathBuf::from(config.require("output")?);
    let outputs = experiments::run(&config)?;

    std::fs::create_dir_all(&out)?;
    let echo = config.echo();
    let mut files = String::new();
    let mut combined = blob_hash(echo.as_bytes());
    for (name, table) in &outputs {
        let bytes = table.render();
        std::fs::write(out.join(name), &bytes)?;
        let h = blob_hash(bytes.as_bytes());
        let _ = writeln!(files, "# output {name} {h}");
        combined.push_str(&h);
    }
    // Comment lines only, so the manifest is itself a runnable config.
    let manifest = format!(
        "# kinetic-flow run manifest\n# content-hash {}\n{files}# wall-time-seconds {:.3}\n{echo}",
        blob_hash(combined.as_bytes()),
        started.elapsed().as_secs_f64()
    );
    std::fs::write(out.join("manifest.txt"), manifest)?;
    for (name, _) in &outputs {
        println!("{}", out.join(name).display());
    }
    Ok(())
}

fn exit_code(e: &Error) -> ExitCode {
    ExitCode::from(if e.is_validation() { 2 } else { 3 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides } => match with_workers(workers_from_env(), || run(&config, &overrides)) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
        Command::Acceptance { suite, output } => {
            let suite = match Suite::parse(&suite) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return exit_code(&e);
                }
            };
            match run_suite(suite, &output) {
                Ok(results) => {
                    for r in &results {
                        println!("{}", r.line());
                    }
                    let passed = results.iter().filter(|r| r.pass).count();
                    println!("{passed}/{} criteria passed; summary in {}", results.len(), output.join("summary.csv").display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code(&e)
                }
            }
        }
    }
}

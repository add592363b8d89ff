//! `pseudoreg`: pseudo-observation regression from the command line.

mod args;
mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;
use serde::Serialize;
use sha2::{Digest, Sha256};

use args::{Cli, Command};
use commands::Format;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pseudoreg::Error),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write `{path}`: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Serialize)]
struct InputDigest {
    path: PathBuf,
    sha256: String,
}

/// Everything needed to repeat a run: re-invoking `argv` with the same
/// inputs reproduces the output bytes.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    subcommand: &'static str,
    argv: Vec<String>,
    config: &'a Command,
    output: &'a args::OutputArgs,
    seed: Option<u64>,
    version: &'static str,
    inputs: Vec<InputDigest>,
    wall_time_seconds: f64,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(pseudoreg::Error::from)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_owned(),
        source,
    })
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let out = &cli.output;
    if let Some(t) = out.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let format = if out.json {
        Format::Json
    } else if out.csv {
        Format::Csv
    } else {
        Format::Table
    };
    let output = match &cli.command {
        Command::Pseudo(a) => commands::pseudo(a, format)?,
        Command::Fit(a) => commands::fit(a, format, out.verbose)?,
        Command::Test(a) => commands::test(a, format)?,
        Command::Simulate(a) => commands::simulate(a, format, out.verbose)?,
        Command::VeteranDemo(a) => commands::veteran_demo(a, format)?,
    };
    let inputs = output
        .inputs
        .iter()
        .map(|p| {
            Ok(InputDigest {
                path: p.clone(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = RunManifest {
        subcommand: cli.command.name(),
        argv: std::env::args().collect(),
        config: &cli.command,
        output: out,
        seed: output.seed,
        version: env!("CARGO_PKG_VERSION"),
        inputs,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).map_err(pseudoreg::Error::from)?;
    match &out.out {
        Some(path) => {
            write_file(path, &output.body)?;
            let mut name = path.as_os_str().to_owned();
            name.push(".manifest.json");
            write_file(Path::new(&name), &(manifest_json + "\n"))?;
        }
        None => {
            print!("{}", output.body);
            if out.verbose {
                eprintln!("{manifest_json}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

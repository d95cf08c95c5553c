//! `mvib`: runs multi-view IB experiment sweeps and writes CSV/JSON results.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mvib::evaluation::Method;
use mvib::experiments::{run_sweep, write_artifacts, ExperimentConfig};
use mvib::Error;

#[derive(Debug, Parser)]
#[command(
    name = "mvib",
    version,
    about = "Multi-view information bottleneck experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a γ sweep and write results.csv, diagnostics.csv, summary.json
    /// and plot data into the output directory.
    Run(RunArgs),
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Methods to run (repeatable or comma separated).
    #[arg(long = "method", value_delimiter = ',', value_parser = parse_method)]
    methods: Vec<Method>,
    /// γ values replacing the grid (repeatable or comma separated).
    #[arg(long = "gamma", value_delimiter = ',', allow_negative_numbers = true)]
    gammas: Vec<f64>,
    /// ADMM penalty.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `eq16`, `eq17`, or a model JSON file.
    #[arg(long)]
    model: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    parallel: Option<usize>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

const EXIT_CONFIG: u8 = 1;
const EXIT_IO: u8 = 2;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Csv(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

impl RunArgs {
    fn config(self) -> mvib::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => ExperimentConfig::default(),
        };
        if !self.methods.is_empty() {
            config.methods = self.methods;
        }
        if !self.gammas.is_empty() {
            config.gammas = self.gammas;
        }
        if let Some(c) = self.c {
            config.c = c;
        }
        if let Some(t) = self.trials {
            config.trials = t;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(o) = self.out {
            config.out = o;
        }
        if let Some(m) = self.model {
            config.model = m;
        }
        if let Some(p) = self.parallel {
            config.parallel = p;
        }
        Ok(config)
    }
}

fn run(args: RunArgs) -> Result<(), u8> {
    let fail = |e: Error| {
        eprintln!("error: {e}");
        exit_code(&e)
    };
    let config = args.config().map_err(fail)?;
    let result = run_sweep(&config).map_err(fail)?;
    write_artifacts(&result, &config.out).map_err(fail)?;
    let failed = result.failures();
    eprintln!(
        "{} trials, {} failed; results in {}",
        result.trials.len(),
        failed,
        config.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run(args) => match run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(code) => ExitCode::from(code),
        },
    }
}

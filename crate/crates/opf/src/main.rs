//! `opf`: run a study, generate synthetic benchmarks or validate inputs.
//!
//! Exit codes: 0 success, 1 invalid inputs, 2 estimation failure, 3 I/O.
//! Logging goes to stderr at the level in `OPF_LOG_LEVEL` (default `info`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use opf::error::{exit, OpfError};
use opf::ingest::{parse_inputs, InputPaths};
use opf::output::write_synth;
use opf::pipeline::run_files;
use opf_core::synth::{generate, SynthSpec};

#[derive(Parser)]
#[command(name = "opf", version, about = "Automated causal-effect studies on panel and cross-sectional data")]
struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct InputArgs {
    #[arg(long)]
    treatment: PathBuf,
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    config: PathBuf,
}

impl InputArgs {
    fn paths(&self) -> InputPaths {
        InputPaths {
            treatment: self.treatment.clone(),
            observations: self.observations.clone(),
            config: self.config.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a study and write result.json and plots into --out.
    Run {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic dataset from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Read and check the inputs, then print what was found.
    Validate {
        #[command(flatten)]
        inputs: InputArgs,
    },
}

fn read_spec(path: &PathBuf) -> Result<SynthSpec, OpfError> {
    let text = std::fs::read_to_string(path).map_err(|e| OpfError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| OpfError::Json {
        path: path.clone(),
        source,
    })
}

fn execute(cli: Cli) -> Result<(), OpfError> {
    match cli.command {
        Command::Run { inputs, out, seed } => {
            run_files(&inputs.paths(), &out, seed)?;
        }
        Command::Synth { spec, out } => {
            let data = generate(&read_spec(&spec)?)?;
            let paths = write_synth(&data, &out)?;
            log::info!(
                "{} rows, {} treated units, true effect {} written to {}",
                data.metadata.n_rows,
                data.metadata.n_treated,
                data.metadata.true_ate,
                paths[0].parent().unwrap_or(&out).display()
            );
        }
        Command::Validate { inputs } => {
            let parsed = parse_inputs(&inputs.paths())?;
            print!("{}", parsed.report.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OPF_LOG_LEVEL", "info")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code())
        }
    }
}

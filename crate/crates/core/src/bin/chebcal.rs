//! Command-line driver for the surrogate pipeline.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 invalid config,
//! 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chebcal::harness::{self, ExperimentConfig};
use chebcal::Error;

#[derive(Parser)]
#[command(name = "chebcal", version, about = "Chebyshev-tensor surrogates for rough Bergomi calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price synthetic surfaces at uniformly drawn parameters.
    GenerateSurfaces(Common),
    /// Build the full Chebyshev tensor.
    BuildDirect(Common),
    /// Build a TT Chebyshev tensor by completion.
    BuildTt(Common),
    /// Compare the surrogate with the generated surfaces.
    AssessAccuracy(Common),
    /// Calibrate the surrogate to every generated surface.
    CalibrateBatch(Common),
    /// Time surrogate and pricer.
    Benchmark(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; missing fields take profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl Common {
    fn load(&self) -> chebcal::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
                ExperimentConfig::from_json(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> chebcal::Result<()> {
    let (common, stage): (&Common, fn(&ExperimentConfig, &std::path::Path) -> chebcal::Result<()>) = match &cli.command {
        Command::GenerateSurfaces(c) => (c, |cfg, out| harness::generate_surfaces(cfg, out).map(drop)),
        Command::BuildDirect(c) => (c, |cfg, out| harness::build_direct(cfg, out).map(drop)),
        Command::BuildTt(c) => (c, |cfg, out| harness::build_tt(cfg, out).map(drop)),
        Command::AssessAccuracy(c) => (c, |cfg, out| harness::assess_accuracy(cfg, out).map(drop)),
        Command::CalibrateBatch(c) => (c, |cfg, out| harness::calibrate_batch(cfg, out).map(drop)),
        Command::Benchmark(c) => (c, |cfg, out| harness::benchmark(cfg, out).map(drop)),
    };
    let cfg = common.load()?;
    std::fs::create_dir_all(&common.out_dir)?;
    stage(&cfg, &common.out_dir)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::OutOfDomain { .. } | Error::Json(_) | Error::Unsupported(_) => 2,
        e if e.is_numerical() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

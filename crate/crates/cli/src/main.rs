use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use mlcsc_cli::algorithm::{Algorithm, Overrides};
use mlcsc_cli::preset::Preset;
use mlcsc_cli::records::summarize;
use mlcsc_cli::workspace::{
    emit_workspace, generate_from_config, generate_workspace, init_thread_pool, run_workspace,
    verify_workspace,
};

/// Multi-layer convolutional sparse coding experiments.
#[derive(Parser)]
#[command(name = "mlcsc", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct LevelArgs {
    /// Per-layer threshold levels for the hard and soft passes, replacing
    /// the theory-derived ones (comma-separated).
    #[arg(long, value_delimiter = ',', value_name = "LEVELS")]
    beta: Option<Vec<f64>>,
    /// Per-layer shrinkage levels for layered_bp, replacing the
    /// theory-derived ones (comma-separated).
    #[arg(long, value_delimiter = ',', value_name = "LEVELS")]
    xi: Option<Vec<f64>>,
}

impl LevelArgs {
    fn overrides(&self) -> Overrides {
        Overrides { betas: self.beta.clone(), xis: self.xi.clone() }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a model and write signal realizations into a directory.
    Generate {
        /// Bundled experiment family: noiseless_k3, noisy_k2 or bp_k5.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Manifest of an existing experiment to rebuild the model from.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory to create the experiment in.
        #[arg(long)]
        out: PathBuf,
        /// Master seed; defaults to the preset's or manifest's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of realizations; defaults to the preset's count.
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Run pursuit algorithms over a generated directory and record the
    /// results.
    Run {
        /// Experiment directory written by generate.
        #[arg(long)]
        dir: PathBuf,
        /// Algorithms to run (comma-separated names).
        #[arg(long, value_delimiter = ',', value_name = "NAMES")]
        algorithms: Option<Vec<String>>,
        #[command(flatten)]
        levels: LevelArgs,
    },
    /// Recompute a directory's contents and check every recorded claim.
    Verify {
        /// Experiment directory with a records table.
        #[arg(long)]
        dir: PathBuf,
        /// Level overrides used for the run being verified, if any.
        #[command(flatten)]
        levels: LevelArgs,
    },
    /// Write plot-ready per-layer series from a records table.
    Emit {
        /// Experiment directory with a records table.
        #[arg(long)]
        dir: PathBuf,
        /// Target directory; defaults to a plot subdirectory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Seed used when neither the command line nor a manifest provides one.
const DEFAULT_SEED: u64 = 20259;

const DEFAULT_ALGORITHMS: [Algorithm; 4] = [
    Algorithm::LayeredHard,
    Algorithm::LayeredSoft,
    Algorithm::LayeredSoftOracle,
    Algorithm::LayeredBp,
];

fn parse_algorithms(names: Option<Vec<String>>) -> Result<Vec<Algorithm>> {
    match names {
        None => Ok(DEFAULT_ALGORITHMS.to_vec()),
        Some(names) => names
            .iter()
            .map(|n| n.parse::<Algorithm>().map_err(|e| anyhow::anyhow!(e)))
            .collect(),
    }
}

fn generate(
    preset: Option<String>,
    config: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    realizations: Option<usize>,
) -> Result<()> {
    match (preset, config) {
        (Some(name), None) => {
            let preset: Preset = name.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            let mut spec = preset.spec(seed.unwrap_or(DEFAULT_SEED));
            if let Some(n) = realizations {
                spec.realizations = n;
            }
            generate_workspace(&spec.gen, spec.realizations, &out)?;
            println!(
                "generated {} with {} realizations under seed {}",
                out.display(),
                spec.realizations,
                spec.gen.seed
            );
        }
        (None, Some(config)) => {
            let n = realizations.unwrap_or(100);
            generate_from_config(&config, &out, n, seed)?;
            println!("generated {} with {n} realizations from {}", out.display(), config.display());
        }
        (None, None) => bail!("pass either --preset or --config"),
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    }
    Ok(())
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    init_thread_pool()?;
    match cli.cmd {
        Cmd::Generate { preset, config, out, seed, realizations } => {
            generate(preset, config, out, seed, realizations)?;
        }
        Cmd::Run { dir, algorithms, levels } => {
            let algorithms = parse_algorithms(algorithms)?;
            let records = run_workspace(&dir, &algorithms, &levels.overrides())?;
            print!("{}", summarize(&records));
            println!("wrote {} records to {}", records.len(), dir.join("records.csv").display());
        }
        Cmd::Verify { dir, levels } => {
            let report = verify_workspace(&dir, &levels.overrides())?;
            if !report.ok() {
                for v in &report.violations {
                    eprintln!("violation: {v}");
                }
                eprintln!(
                    "{} violations across {} realizations, {} records",
                    report.violations.len(),
                    report.realizations,
                    report.records
                );
                return Ok(ExitCode::from(1));
            }
            println!(
                "verified {} realizations, {} records: all claims hold",
                report.realizations, report.records
            );
        }
        Cmd::Emit { dir, out } => {
            let files = emit_workspace(&dir, out.as_deref())?;
            for f in &files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

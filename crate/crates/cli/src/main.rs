//! `gazeacc` command-line front end.
//!
//! Exit status: 0 on success, 1 on data errors, 2 on usage or configuration
//! errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gazeacc::dataio::OutputFormat;

mod commands;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "gazeacc", version, about = "Gaze estimation accuracy analysis")]
struct Cli {
    /// Worker threads; defaults to the number of cores. Never changes output bytes.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a sample file (and metadata) against the schema and report every violation.
    Validate(ValidateArgs),
    /// Per-subject errors plus population split tables.
    SubjectError(SubjectErrorArgs),
    /// Mean sample error per depth bin.
    DepthCurve(DepthCurveArgs),
    /// Directional statistics over the field of view: grid CSV and figures.
    Directional(DirectionalArgs),
    /// Generate a synthetic dataset from a configuration.
    Synth(SynthArgs),
    /// Run the built-in closure checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Directory for `violations.json` and `manifest.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SubjectErrorArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DepthCurveArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Grid flags shared by `directional` and `selftest`.
#[derive(Debug, Args)]
struct GridFlags {
    /// Lattice spacing, degrees.
    #[arg(long)]
    grid_step: Option<f64>,
    /// Neighborhood radius, degrees.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    min_cell_samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Svg,
    Both,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Svg => OutputFormat::Svg,
            FormatArg::Both => OutputFormat::Both,
        }
    }
}

#[derive(Debug, Args)]
struct DirectionalArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    grid: GridFlags,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample file; `.jsonl` or `.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Metadata file; defaults to the sample path with a `.meta` infix.
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for `selftest.json` and `manifest.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    grid: GridFlags,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl From<gazeacc::Error> for Failure {
    fn from(e: gazeacc::Error) -> Self {
        match e {
            gazeacc::Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        if let Some(n) = cli.threads {
            if n == 0 {
                return Err(Failure::Usage("--threads must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Failure::Usage(e.to_string()))?;
        }
        match cli.command {
            Command::Validate(a) => commands::validate(a),
            Command::SubjectError(a) => commands::subject_error(a),
            Command::DepthCurve(a) => commands::depth_curve(a),
            Command::Directional(a) => commands::directional(a),
            Command::Synth(a) => commands::synth(a),
            Command::Selftest(a) => commands::selftest(a),
        }
    })();
    match result {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use deltavox::geometry::Vec3;

mod commands;
mod table;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;

/// Sparse voxel Δ features, scene-flow losses and metrics for multi-frame LiDAR.
#[derive(Debug, Parser)]
#[command(name = "deltavox", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Features {
    Occupancy,
    Offset,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic sequence from a TOML scene spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the Δ feature tensor of the latest frame.
    Delta {
        #[arg(long)]
        manifest: PathBuf,
        /// Number of past frames N.
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// Voxel size per axis in meters, e.g. 0.2,0.2,0.2.
        #[arg(long, value_parser = parse_vec3)]
        res: Vec3,
        /// Grid size in voxels, e.g. 512,512,32.
        #[arg(long, value_parser = parse_dims)]
        dims: [u32; 3],
        /// Grid corner in sensor coordinates; default centers the grid.
        #[arg(long, value_parser = parse_vec3)]
        origin: Option<Vec3>,
        #[arg(long, value_enum, default_value = "occupancy")]
        features: Features,
        #[arg(long)]
        out: PathBuf,
        /// Also run the dense oracle and fail on any disagreement.
        #[arg(long)]
        check_dense: bool,
    },
    /// Score predicted residual flow against ground truth.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Flow directory or builtin:zero, builtin:oracle, builtin:noisy:<sigma>[:<seed>].
        #[arg(long)]
        pred: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute supervision losses for predicted residual flow.
    Loss {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pred: String,
        /// TOML weight overrides; defaults are used when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Compare analytic gradients with central finite differences.
        #[arg(long)]
        grad_check: bool,
        /// Points per frame pair checked by --grad-check.
        #[arg(long, default_value_t = 64)]
        grad_check_points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write builtin predictions as a flow directory.
    Predict {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pred: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run sparse-vs-dense benchmark cases from a TOML file.
    Bench {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every seeded cross-module property.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dump a frame, flow or tensor file as CSV.
    ExportCsv {
        input: PathBuf,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got '{s}'"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| format!("'{p}' is not a valid number"))?);
    }
    out.try_into().map_err(|_| unreachable!())
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    parse_triple::<f64>(s).map(Vec3::from)
}

fn parse_dims(s: &str) -> Result<[u32; 3], String> {
    parse_triple::<u32>(s)
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("DELTAVOX_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("DELTAVOX_THREADS must be a non-negative integer, got '{raw}'"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| format!("cannot size the worker pool: {e}"))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                deltavox::Error::Verification(_) => EXIT_VERIFY,
                _ => EXIT_DATA,
            })
        }
    }
}

//! `gwn`: source generation, theory baselines, bound checks, codec
//! training and coding, and curve evaluation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit code of input, config and file-format errors.
pub const EXIT_VALIDATION: u8 = 2;
/// Exit code of divergence, infeasibility and non-convergence.
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "gwn", version, about = "Gray-Wyner network toolkit")]
struct Cli {
    /// Root directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

/// A two-axis joint PMF, from a file or a named preset.
#[derive(Args, Clone, Debug)]
pub struct JointArgs {
    /// Joint PMF in the `axes:` text format.
    #[arg(long, conflicts_with = "preset")]
    pub joint: Option<PathBuf>,
    /// copy-bits, independent-bits, copy-N, independent-N, dsbs
    #[arg(long)]
    pub preset: Option<String>,
    /// Crossover probability of the `dsbs` preset.
    #[arg(long, default_value_t = 0.1)]
    pub a0: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Write a source description and samples.
    GenSource {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        samples: usize,
    },
    /// Blahut-Arimoto curves of a source.
    BaCurves {
        /// Run config whose synthetic source is used when no joint is given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        joint: JointArgs,
        /// hamming or squared (on symbol indices).
        #[arg(long, default_value = "hamming")]
        distortion: String,
        /// Comma-separated negative slopes; defaults to a log-spaced sweep.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        slopes: Vec<f64>,
    },
    /// Gacs-Korner and Wyner common information of a lossless pair.
    CommonInfo {
        #[command(flatten)]
        joint: JointArgs,
        #[arg(long)]
        aux_size: Option<usize>,
    },
    /// Enumerate achieving tuples and check the common-information ordering.
    CheckBounds {
        #[command(flatten)]
        joint: JointArgs,
        #[arg(long, default_value = "hamming")]
        distortion: String,
        /// Joint slopes `s1,s2`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "targets")]
        slopes: Vec<f64>,
        /// Distortion targets `d1,d2`.
        #[arg(long, value_delimiter = ',')]
        targets: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        grid: usize,
    },
    /// Discrete Gray-Wyner objective over deterministic mappings.
    GwDiscrete {
        #[command(flatten)]
        joint: JointArgs,
        #[arg(long, default_value = "hamming")]
        distortion: String,
        #[arg(long, value_delimiter = ',', default_value = "0,0")]
        targets: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,1")]
        alphas: Vec<f64>,
        /// Alphabet sizes of `Y0,Y1,Y2`.
        #[arg(long, value_delimiter = ',', default_value = "3,3,3")]
        sizes: Vec<usize>,
    },
    /// Train one codec.
    Train {
        #[command(flatten)]
        run: commands::RunOverrides,
    },
    /// Train a grid of codecs.
    Sweep {
        #[command(flatten)]
        run: commands::RunOverrides,
        #[arg(long, value_delimiter = ',', required = true)]
        archs: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        betas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        etas: Vec<f64>,
        /// Codec seeds; defaults to the run seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Number of concurrent training runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Range-code held-out batches with a trained codec.
    Encode {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 4)]
        batches: usize,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
    },
    /// Decode a container written by `encode`.
    Decode {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Number of samples in the container.
        #[arg(long)]
        samples: usize,
    },
    /// BD-rate of a test curve against a reference curve, in percent.
    Bdrate {
        #[arg(long, requires = "test")]
        reference: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Point file holding several architectures; emits the full matrix.
        #[arg(long, conflicts_with_all = ["reference", "test"])]
        matrix: Option<PathBuf>,
        #[arg(long, default_value = "transmit")]
        rate: String,
    },
    /// Empirical I(Z1; Z2) from joint-arch and independent-arch points.
    EmpiricalMi {
        #[arg(long)]
        joint: PathBuf,
        #[arg(long)]
        independent: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(&cli.out, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.chain().any(|c| {
                c.downcast_ref::<gwn_core::Error>()
                    .is_some_and(|g| !g.is_validation())
            });
            ExitCode::from(if numerical { EXIT_NUMERICAL } else { EXIT_VALIDATION })
        }
    }
}

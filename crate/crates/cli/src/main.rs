//! `spiralcine`: phantom simulation, spiral acquisition, reconstruction,
//! gating, segmentation and volumetry as separate file-to-file steps.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "spiralcine", version, about = "Spiral real-time cardiac cine pipeline")]
pub struct Cli {
    /// Worker threads for frame-parallel steps (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic cardiac phantom.
    Phantom {
        #[command(subcommand)]
        action: PhantomCommand,
    },
    /// Spiral trajectory design, rotation schedule and GSTF correction.
    Traj {
        #[command(subcommand)]
        action: TrajCommand,
    },
    /// Simulates multi-coil k-space of one phantom slice.
    Acquire(AcquireArgs),
    /// Frame-wise or series reconstruction of raw data.
    Recon(ReconArgs),
    /// Self-gating signal and cardiac cycle detection.
    Gate(GateArgs),
    /// Retrospective binning into fully sampled cardiac phases.
    Bin(BinArgs),
    /// xSDNet segmentation and reconstruction of interim images.
    Infer(InferArgs),
    /// LV volume curve, ED/ES detection and ejection fraction.
    Volumetry(VolumetryArgs),
    /// Agreement and image quality metrics.
    Eval {
        #[command(subcommand)]
        action: EvalCommand,
    },
    /// xSDNet weight files.
    Weights {
        #[command(subcommand)]
        action: WeightsCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum PhantomCommand {
    /// Writes images.imgs, masks.mask and truth.json into `--out`.
    Gen {
        /// Phantom configuration, TOML or JSON; missing keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the end-systolic radius to reach this ejection fraction (0..1).
        #[arg(long)]
        ejection_fraction: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Design field of view, mm.
    #[arg(long)]
    pub fov: Option<f64>,
    /// Nominal resolution, mm.
    #[arg(long)]
    pub resolution: Option<f64>,
    #[arg(long)]
    pub n_arms: Option<usize>,
    /// mT/m
    #[arg(long)]
    pub max_gradient: Option<f64>,
    /// T/m/s
    #[arg(long)]
    pub max_slew: Option<f64>,
    /// µs
    #[arg(long)]
    pub dwell_time: Option<f64>,
    /// µs
    #[arg(long)]
    pub max_readout: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum TrajCommand {
    /// Single-orientation interleaved spiral.
    Design {
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rotated orientations of a base interleave set.
    Schedule {
        /// Base trajectory; without it the spiral is designed from the flags.
        #[arg(long)]
        traj: Option<PathBuf>,
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long, default_value_t = 8)]
        orientations: usize,
        #[arg(long, default_value_t = 1)]
        frames_per_orientation: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-integrates the base arm through a gradient transfer function.
    Gstf {
        #[arg(long)]
        traj: PathBuf,
        /// Sampled model as JSON (`frequencies`, `response`, `delay`).
        #[arg(long, conflicts_with_all = ["delay", "cutoff"])]
        model: Option<PathBuf>,
        /// Pure delay, µs.
        #[arg(long)]
        delay: Option<f64>,
        /// First-order low-pass cutoff, Hz.
        #[arg(long)]
        cutoff: Option<f64>,
        /// Highest modelled frequency, Hz.
        #[arg(long, default_value_t = 100_000.0)]
        max_freq: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AcquireArgs {
    /// Directory written by `phantom gen`.
    #[arg(long)]
    pub phantom: PathBuf,
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub coils: usize,
    /// Noise standard deviation relative to the mean sample magnitude.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub coil_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub slice: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReconMethod {
    Gridding,
    Cgsense,
    Cs,
    Lrs,
}

#[derive(Debug, Args)]
pub struct ReconArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long, value_enum)]
    pub method: ReconMethod,
    /// Iterations (cgsense default 10, cs and lrs default 30).
    #[arg(long)]
    pub iters: Option<usize>,
    /// l1-wavelet weight (cs).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Singular value threshold, fraction of the largest (lrs).
    #[arg(long)]
    pub lambda_l: Option<f64>,
    /// Temporal-spectrum threshold, fraction of the largest (lrs).
    #[arg(long)]
    pub lambda_s: Option<f64>,
    /// Density-weighted CG-SENSE normal equations.
    #[arg(long)]
    pub density_weighting: bool,
    /// mm, stored in the output header.
    #[arg(long, default_value_t = 8.0)]
    pub slice_thickness: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Residual and parameter report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GateArgs {
    #[arg(long)]
    pub raw: PathBuf,
    /// Gating parameters as JSON; missing keys take defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BinArgs {
    #[arg(long)]
    pub raw: PathBuf,
    /// Report written by `gate`.
    #[arg(long)]
    pub gating: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub phases: usize,
    #[arg(long, default_value_t = 8.0)]
    pub slice_thickness: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-phase completeness report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Magnitude or complex images, one coil.
    #[arg(long)]
    pub interim: PathBuf,
    #[arg(long)]
    pub out_recon: PathBuf,
    #[arg(long)]
    pub out_seg: PathBuf,
}

#[derive(Debug, Args)]
pub struct VolumetryArgs {
    /// A MASK file or a directory of them, stacked in file name order.
    #[arg(long)]
    pub masks: PathBuf,
    /// mm; defaults to the mask header.
    #[arg(long)]
    pub pixel_size: Option<f64>,
    /// mm; defaults to the mask header.
    #[arg(long)]
    pub thickness: Option<f64>,
    /// ms
    #[arg(long, default_value_t = 48.0)]
    pub frame_dt: f64,
    /// Fraction of the curve range.
    #[arg(long)]
    pub min_prominence: Option<f64>,
    /// ms
    #[arg(long)]
    pub min_separation: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Bland-Altman bias and limits of agreement of `a - b`.
    Ba {
        /// JSON array of numbers.
        #[arg(long)]
        a: PathBuf,
        /// JSON array of numbers.
        #[arg(long)]
        b: PathBuf,
        /// Per-pair CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// NRMSE and PSNR of image magnitudes against reference `b`.
    Nrmse {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-label Dice overlap of two masks.
    Dice {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum WeightsCommand {
    /// Randomly initialized weights for the standard topology.
    Init {
        /// Model configuration as JSON; missing keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", Failure::usage(message.trim()).to_json());
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("{}", Failure::usage("--threads must be a positive integer").to_json());
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::FAILURE
        }
    }
}

//! `headfield` — phantom generation, per-axis segmentation training and
//! inference, label fusion, head-model assembly, montage field solving, and
//! evaluation, as one subcommand pipeline.
//!
//! Exit codes are a stable contract: 0 success, 2 input/validation error,
//! 3 numerical failure (singular system or non-convergence).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod manifest;

#[derive(Parser)]
#[command(
    name = "headfield",
    version,
    about = "Deep-structure segmentation and tDCS field simulation pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom volume pair (or a jittered family).
    Phantom(PhantomArgs),
    /// Train one per-axis segmentation network on a dataset directory.
    Train(TrainArgs),
    /// Segment an MRI with three per-axis checkpoints and fuse the results.
    Segment(SegmentArgs),
    /// Embed a deep-structure segmentation into a base tissue model.
    AssembleModel(AssembleArgs),
    /// Solve the electric field for a montage on a labelled head model.
    Solve(SolveArgs),
    /// Compare two segmentations (and optionally two field magnitudes).
    Evaluate(EvaluateArgs),
    /// Write the bundled descriptors (phantom, tissue table, slab montage).
    Assets(AssetsArgs),
}

#[derive(clap::Args, serde::Serialize)]
pub struct PhantomArgs {
    /// Phantom descriptor JSON, or the bundled name `deep7`.
    #[arg(long)]
    pub spec: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Emit `caseNN/` subdirectories with this many jittered variants
    /// instead of a single pair.
    #[arg(long)]
    pub family: Option<usize>,
}

#[derive(clap::Args, serde::Serialize)]
pub struct TrainArgs {
    /// Dataset directory: one `{case}/mri.vvol` + `{case}/labels.vvol` pair
    /// per subdirectory.
    #[arg(long)]
    pub data: PathBuf,
    /// Slice axis: axial, sagittal or coronal.
    #[arg(long)]
    pub axis: String,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of structures (decoder tracks).
    #[arg(long, default_value_t = 7)]
    pub degree: usize,
    /// Encoder/decoder pyramid depth.
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 3)]
    pub encoder_kernel: usize,
    /// Per-track decoder kernel sizes, comma separated (e.g. `5,7,7,7,5,5,7`);
    /// defaults to the encoder kernel everywhere.
    #[arg(long)]
    pub kernels: Option<String>,
    /// Square network input size (slices are center-padded/cropped to it).
    #[arg(long, default_value_t = 256)]
    pub input_size: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Validation-split fraction of the slice pool.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// Keep every k-th slice along the training axis (1 = all slices).
    #[arg(long, default_value_t = 1)]
    pub slice_stride: usize,
}

#[derive(clap::Args, serde::Serialize)]
pub struct SegmentArgs {
    #[arg(long)]
    pub mri: PathBuf,
    /// Checkpoint trained on axial slices.
    #[arg(long)]
    pub axial: PathBuf,
    #[arg(long)]
    pub sagittal: PathBuf,
    #[arg(long)]
    pub coronal: PathBuf,
    /// Fused label volume output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Background threshold of the argmax labelling.
    #[arg(long, default_value_t = 0.3)]
    pub epsilon: f64,
    /// In-plane vote window edge (odd).
    #[arg(long, default_value_t = 3)]
    pub neighborhood: usize,
    /// Label volume restricting where output labels may survive.
    #[arg(long, requires = "gm_labels")]
    pub gm_mask: Option<PathBuf>,
    /// Mask labels inside which output is kept, comma separated.
    #[arg(long, requires = "gm_mask")]
    pub gm_labels: Option<String>,
}

#[derive(clap::Args, serde::Serialize)]
pub struct AssembleArgs {
    /// Base tissue label volume.
    #[arg(long)]
    pub base: PathBuf,
    /// Deep-structure segmentation to embed.
    #[arg(long)]
    pub deep: PathBuf,
    /// Deep label `n` becomes `offset + n` in the output.
    #[arg(long)]
    pub offset: u8,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, serde::Serialize)]
pub struct SolveArgs {
    /// Labelled head model volume.
    #[arg(long)]
    pub model: PathBuf,
    /// Montage descriptor JSON (`patch` or `plates`).
    #[arg(long)]
    pub montage: PathBuf,
    /// Output directory (potentials, field volumes, report).
    #[arg(long)]
    pub out: PathBuf,
    /// Conductivity table JSON, or `default` for the bundled head table.
    #[arg(long, default_value = "default")]
    pub table: String,
    /// `sor` or `multigrid`.
    #[arg(long, default_value = "sor")]
    pub method: String,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// SOR over-relaxation factor.
    #[arg(long, default_value_t = 1.9)]
    pub omega: f64,
    #[arg(long, default_value_t = 50_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 3)]
    pub mg_levels: usize,
}

#[derive(clap::Args, serde::Serialize)]
pub struct EvaluateArgs {
    /// Segmentation under test.
    #[arg(long)]
    pub seg_a: PathBuf,
    /// Reference segmentation; structure and region rows follow its labels.
    #[arg(long)]
    pub seg_b: PathBuf,
    /// CSV report path (a JSON twin is written alongside).
    #[arg(long)]
    pub out: PathBuf,
    /// Field magnitude volume paired with seg-a.
    #[arg(long, requires = "efield_b")]
    pub efield_a: Option<PathBuf>,
    /// Reference field magnitude volume.
    #[arg(long, requires = "efield_a")]
    pub efield_b: Option<PathBuf>,
    /// Region labels for the field rows, comma separated; defaults to every
    /// structure of seg-b.
    #[arg(long)]
    pub regions: Option<String>,
    /// Fields are capped at this percentile per region before comparison.
    #[arg(long, default_value_t = 99.9)]
    pub cap_percentile: f64,
}

#[derive(clap::Args, serde::Serialize)]
pub struct AssetsArgs {
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Phantom(args) => commands::phantom::run(&args),
        Command::Train(args) => commands::train::run(&args),
        Command::Segment(args) => commands::segment::run(&args),
        Command::AssembleModel(args) => commands::assemble::run(&args),
        Command::Solve(args) => commands::solve::run(&args),
        Command::Evaluate(args) => commands::evaluate::run(&args),
        Command::Assets(args) => commands::assets::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

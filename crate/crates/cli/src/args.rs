use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coevo::data::BackgroundMode;

/// Single-view mesh reconstruction with co-evolutionary domain adaptation.
///
/// Settings are resolved as built-in defaults, then the `--config` file,
/// then command-line flags; later sources win.
#[derive(Debug, Parser)]
#[command(name = "coevo", version, about)]
pub struct Cli {
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a toy multi-view dataset of primitive shapes.
    MakeData(MakeDataArgs),
    /// Train the reconstruction and domain-adaptation networks.
    Train(TrainArgs),
    /// Score checkpoints by 3D IoU against ground-truth meshes.
    Eval(EvalArgs),
    /// Render a mesh, or a checkpoint's reconstruction of an image.
    Render(RenderArgs),
    /// Dump a checkpoint's image-to-rendering and round-trip outputs.
    Translate(TranslateArgs),
}

#[derive(Debug, Args)]
pub struct MakeDataArgs {
    /// TOML file with toy dataset settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: <output root>/data/toy).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Objects per shape, e.g. `cube=10,sphere=10,pyramid=10`.
    #[arg(long)]
    pub shapes: Option<String>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// uniform, checker, noise, or a directory of background images.
    #[arg(long)]
    pub background: Option<BackgroundMode>,
    /// Draw an independent background for every view.
    #[arg(long)]
    pub per_view_backgrounds: bool,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `make-data`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Run name; the run directory is `<output root>/<name>`.
    #[arg(long)]
    pub name: Option<String>,
    /// Output root (default: $COEVO_OUTPUT_ROOT or `runs`).
    #[arg(long)]
    pub output_root: Option<PathBuf>,
    #[arg(long)]
    pub cycles: Option<usize>,
    #[arg(long)]
    pub da_iters: Option<usize>,
    #[arg(long)]
    pub recon_iters: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Standard deviation of the azimuth noise, degrees.
    #[arg(long)]
    pub azimuth_sigma: Option<f64>,
    /// Standard deviation of the brightness perturbation.
    #[arg(long)]
    pub brightness_sigma: Option<f64>,
    #[arg(long)]
    pub perturb_seed: Option<u64>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// One or more checkpoints; results are reported per run and averaged.
    #[arg(long, num_args = 1.., required_unless_present = "ground_truth")]
    pub checkpoint: Vec<PathBuf>,
    /// Score the ground-truth meshes against themselves.
    #[arg(long, conflicts_with = "checkpoint")]
    pub ground_truth: bool,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Report directory (default: <output root>/eval).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub view_stride: usize,
    #[arg(long, default_value_t = 0.0)]
    pub brightness_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated brightness sigmas to sweep, e.g. `0,1,2,3,4`.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Mesh to render (Wavefront OBJ).
    #[arg(long, conflicts_with_all = ["checkpoint", "input"])]
    pub mesh: Option<PathBuf>,
    /// Checkpoint whose reconstruction of `--input` is rendered.
    #[arg(long, requires = "input")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of evenly spaced azimuths, starting at `--azimuth`.
    #[arg(long, default_value_t = 1)]
    pub views: usize,
    #[arg(long, default_value_t = 0.0)]
    pub azimuth: f64,
    #[arg(long, default_value_t = coevo::renderer::DEFAULT_ELEVATION)]
    pub elevation: f64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = coevo::renderer::DEFAULT_SMOOTHING)]
    pub smoothing: f64,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input images (PNG, square, at the checkpoint's resolution).
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

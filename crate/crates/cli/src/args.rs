use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icpcov::dataio::SceneKind;
use icpcov::mc_dataset::Scenario;
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "icpcov",
    version,
    about = "ICP registration covariance: labelling, learning and fusion"
)]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate synthetic data: a KITTI-layout scan sequence or noisy registration results.
    Synth(SynthArgs),
    /// Label scans of a sequence with Monte Carlo registration covariances.
    Dataset(DatasetArgs),
    /// Train the covariance predictor on a dataset file.
    Train(TrainArgs),
    /// Predict covariances for dataset records, a sequence, or a single scan.
    Predict(PredictArgs),
    /// Fuse registration poses with an error-state EKF.
    Fuse(FuseArgs),
    /// Covariance (kl, mae) or trajectory (ape, rpe) metrics.
    Eval(EvalArgs),
    /// Per-frame table for colouring a trajectory by tr(Sigma_xy).
    PlotData(PlotDataArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Dataset(_) => "dataset",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Fuse(_) => "fuse",
            Command::Eval(_) => "eval",
            Command::PlotData(_) => "plot-data",
        }
    }

    pub fn out(&self) -> &PathBuf {
        match self {
            Command::Synth(a) => &a.out,
            Command::Dataset(a) => &a.out,
            Command::Train(a) => &a.out,
            Command::Predict(a) => &a.out,
            Command::Fuse(a) => &a.out,
            Command::Eval(a) => &a.out,
            Command::PlotData(a) => &a.out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// velodyne/*.bin, poses and calibration under <out>/.
    Sequence,
    /// Ground truth, noisy registration poses, covariances and times under <out>/.
    Measurements,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Sequence)]
    pub kind: SynthKind,
    /// Scene for `sequence`: tunnel, room, corridor or plane.
    #[arg(long, default_value = "corridor")]
    pub scene: SceneKind,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    /// Sequence name for `sequence`.
    #[arg(long, default_value = "00")]
    pub seq: String,
    /// Frames per noise regime for `measurements`.
    #[arg(long, default_value_t = 50)]
    pub block: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetArgs {
    /// KITTI odometry root (containing sequences/ and poses/).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "00")]
    pub seq: String,
    #[arg(long, default_value = "prebuilt")]
    pub scenario: Scenario,
    #[arg(long, default_value_t = 50)]
    pub stride: usize,
    /// Perturbed registrations per scan.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Voxel size of the reference map, metres.
    #[arg(long)]
    pub map_voxel: Option<f64>,
    /// Also write 70/20/10 train/test/eval files next to the output.
    #[arg(long)]
    pub split: bool,
    /// JSON Lines output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset JSON Lines file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "128,64")]
    pub hidden: Vec<usize>,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub no_weighted_sampling: bool,
    /// Model container output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset file (.jsonl), a single scan (.bin) or a KITTI root (with --seq).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub seq: Option<String>,
    /// Covariance table (CSV).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FuseArgs {
    /// Directory with poses.txt (registration results), covs.csv and optionally times.txt.
    #[arg(long)]
    pub input: PathBuf,
    /// Covariance table overriding <input>/covs.csv.
    #[arg(long)]
    pub covs: Option<PathBuf>,
    /// Weight every frame with the sequence-mean covariance instead.
    #[arg(long)]
    pub baseline: bool,
    /// Frames in the covariance moving average.
    #[arg(long, default_value_t = icpcov::fusion::DEFAULT_SMOOTHING_WINDOW)]
    pub smoothing: usize,
    /// Fused trajectory (KITTI pose format).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Kl,
    Mae,
    Ape,
    Rpe,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub metric: Metric,
    /// Predicted covariances (CSV) or estimated trajectory (KITTI poses).
    #[arg(long)]
    pub input: PathBuf,
    /// Reference covariances (CSV or dataset .jsonl) or ground-truth trajectory.
    #[arg(long)]
    pub gt: PathBuf,
    /// Baseline in the same format as --input; adds improvement rows.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, default_value_t = icpcov::metrics::DEFAULT_WINDOW)]
    pub window: usize,
    /// Frame offset for RPE.
    #[arg(long, default_value_t = 1)]
    pub delta: usize,
    /// Report (CSV).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotDataArgs {
    /// Trajectory (KITTI poses).
    #[arg(long)]
    pub input: PathBuf,
    /// Covariance table with one row per frame.
    #[arg(long)]
    pub covs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

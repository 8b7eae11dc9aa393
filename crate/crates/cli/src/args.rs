use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use particul::io::synthetic::SyntheticSpec;
use particul::{HeadConfig, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "particul", version, about = "Unsupervised part detectors over frozen feature maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a detector bank on the training split of a manifest.
    Train(TrainCmd),
    /// Fit per-detector score distributions on the training split.
    Calibrate(CalibrateCmd),
    /// Score one feature file and print a per-detector TSV table.
    Score(ScoreCmd),
    /// Train per-part classifier heads on top of a frozen bank.
    TrainHeads(TrainHeadsCmd),
    /// Evaluate a classifier and print per-image part logit traces as JSON.
    Classify(ClassifyCmd),
    /// Render per-detector activation heatmaps as PNG files.
    Visualize(VisualizeCmd),
    /// Write a synthetic planted-pattern dataset.
    Synth(SynthCmd),
    /// Run the synthetic pipeline with parts and unicity-weight sweeps.
    Bench(BenchCmd),
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for `bank.bin` and `train_log.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of part detectors.
    #[arg(long, default_value_t = 6)]
    pub parts: usize,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct CalibrateCmd {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    /// Output calibration JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreCmd {
    /// Feature file to score.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    /// Confidence at or above which a part is reported visible.
    #[arg(long, default_value_t = 0.02)]
    pub visibility_threshold: f64,
}

#[derive(Debug, Args)]
pub struct TrainHeadsCmd {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    /// Output classifier container.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to one more than the largest training label.
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[command(flatten)]
    pub heads: HeadOverrides,
}

#[derive(Debug, Args)]
pub struct ClassifyCmd {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for particul::io::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Self::Train,
            SplitArg::Test => Self::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct VisualizeCmd {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Heatmap height in pixels.
    #[arg(long, default_value_t = 224)]
    pub height: u32,
    /// Heatmap width in pixels.
    #[arg(long, default_value_t = 224)]
    pub width: u32,
    /// Original image (PNG or JPEG) to blend each heatmap onto.
    #[arg(long)]
    pub image: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub spec: SpecOverrides,
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Detector counts for the coverage sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 6])]
    pub parts_sweep: Vec<usize>,
    /// Unicity weights for the coverage sweep at `p_true` detectors.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.2, 0.5])]
    pub lambda_sweep: Vec<f64>,
    #[command(flatten)]
    pub spec: SpecOverrides,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub rmsprop_smoothing: Option<f64>,
    #[arg(long)]
    pub rmsprop_epsilon: Option<f64>,
    /// Seeds both the initial kernels and the shuffling order.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainOverrides {
    pub fn apply(&self) -> TrainConfig {
        let mut c = TrainConfig::default();
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f { c.$f = v; } )*};
        }
        set!(lambda, epochs, learning_rate, weight_decay, batch_size, rmsprop_smoothing, rmsprop_epsilon, seed);
        c
    }
}

#[derive(Debug, Args, Default)]
pub struct HeadOverrides {
    /// Widths of the two hidden layers.
    #[arg(long, num_args = 2, value_names = ["H1", "H2"])]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl HeadOverrides {
    pub fn apply(&self) -> HeadConfig {
        let mut c = HeadConfig::default();
        if let Some(h) = &self.hidden {
            c.hidden = [h[0], h[1]];
        }
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f { c.$f = v; } )*};
        }
        set!(dropout_rate, epochs, batch_size, learning_rate, weight_decay, seed);
        c
    }
}

#[derive(Debug, Args, Default)]
pub struct SpecOverrides {
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub p_true: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub pattern_gain: Option<f64>,
    /// Per-pattern gains, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub gains: Option<Vec<f64>>,
    #[arg(long)]
    pub absence_rate: Option<f64>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub variant_angle_deg: Option<f64>,
    /// Seeds the planted directions and the images.
    #[arg(long)]
    pub data_seed: Option<u64>,
}

impl SpecOverrides {
    pub fn apply(&self) -> SyntheticSpec {
        let mut s = SyntheticSpec::default();
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = self.$f { s.$f = v; } )*};
        }
        set!(height, width, depth, p_true, n_train, n_test, noise_sigma, pattern_gain, absence_rate, num_classes, variant_angle_deg);
        if let Some(seed) = self.data_seed {
            s.seed = seed;
        }
        if let Some(g) = &self.gains {
            s.gains = g.clone();
        }
        s
    }
}

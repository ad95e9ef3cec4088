use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use decompnet::data::FloatEncoding;
use decompnet::presets::PresetName;

/// Decomposer networks: data generation, training, decomposition, σ-edited
/// synthesis, SVD evaluation and an HTTP service.
///
/// Settings precedence, lowest first: library defaults, --preset, --config
/// file, --set key=value, dedicated flags.
#[derive(Debug, Parser)]
#[command(name = "decompnet", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for the model (train) or the generator (gen-data).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (output directory for decompose).
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Encoding {
    /// IEEE-754 bit patterns.
    Bits,
    /// 17 significant digits.
    Decimal,
}

impl From<Encoding> for FloatEncoding {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Bits => FloatEncoding::Bits,
            Encoding::Decimal => FloatEncoding::Decimal,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Dataset file written by gen-data.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Synthetic data, e.g. `d=50,n=500,rank=3,noise=0.01,seed=1` or
    /// `kind=halves,h=8,w=16,n=400`.
    #[arg(long, value_name = "SPEC")]
    pub synth: Option<String>,
    /// Directory of PGM images (searched recursively).
    #[arg(long, value_name = "DIR")]
    pub pgm_dir: Option<PathBuf>,
    /// Block-average factor for PGM images.
    #[arg(long, value_name = "F")]
    pub downsample: Option<usize>,
}

impl SourceArgs {
    pub fn any(&self) -> bool {
        self.data.is_some() || self.synth.is_some() || self.pgm_dir.is_some()
    }
}

#[derive(Debug, Args)]
pub struct ModelData {
    /// Trained model file.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Dataset file the model was trained on.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a dataset file from a generator or a PGM directory.
    GenData {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_enum)]
        encoding: Option<Encoding>,
    },
    /// Train a model and write it with a JSON-lines report.
    Train {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        preset: Option<PresetName>,
        /// Override a setting, e.g. `model.n_branches=5` (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        n_branches: Option<usize>,
        /// Mask centers as `row,col;row,col;...`. Implies masks.
        #[arg(long, value_name = "CENTERS")]
        mask_centers: Option<String>,
        /// Report path; defaults to the model path with `.report.jsonl`.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
        #[arg(long, value_enum)]
        encoding: Option<Encoding>,
    },
    /// Write original, component and sum images plus a σ sidecar per sample.
    Decompose {
        #[command(flatten)]
        io: ModelData,
        /// Sample ids, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<usize>,
    },
    /// Resynthesize one sample with edited σ.
    Synth {
        #[command(flatten)]
        io: ModelData,
        #[arg(long)]
        sample: Option<usize>,
        /// Full list `1.0,0.5,...` or sparse edits `0=1.5,2=0`.
        #[arg(long, allow_hyphen_values = true)]
        sigma: Option<String>,
        /// Sidecar-style JSON with `sample` and `sigma`.
        #[arg(long, value_name = "FILE")]
        overrides_file: Option<PathBuf>,
    },
    /// Compare rank-1 branches with the deflation SVD of the data.
    EvalSvd {
        #[command(flatten)]
        io: ModelData,
        #[arg(long, default_value_t = 0.99)]
        min_cos: f64,
    },
    /// Serve the model over HTTP.
    Serve {
        #[command(flatten)]
        io: ModelData,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
        /// Directory with the studio bundle served at `/`.
        #[arg(long, value_name = "DIR")]
        static_dir: Option<PathBuf>,
    },
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "trpfuse",
    version,
    about = "Turn-taking prediction fusion over VAP and LLM probability streams",
    after_help = "Every flag may also be set as `name=value` in the file given to --config; \
                  flags on the command line win. TRPFUSE_LOG sets log verbosity (default: warn)."
)]
pub struct Cli {
    /// key=value file of default flag values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Write log records here instead of stderr
    #[arg(long, global = true, value_name = "FILE")]
    pub log_file: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build ground truth and turn spans from a raw corpus
    Prepare(PrepareArgs),
    /// Write a synthetic dataset whose labels depend on both streams jointly
    Synth(SynthArgs),
    /// Fit an LR or LSTM ensemble on a dataset and save it
    Train(TrainArgs),
    /// Cross-validated evaluation: report CSV plus per-recording traces
    Evaluate(EvaluateArgs),
    /// Score every (threshold, flip) grid point on a dataset
    Sweep(SweepArgs),
    /// Concatenate report CSVs into one table
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusKind {
    Ccpe,
    Icc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnsembleKind {
    Lr,
    Lstm,
    Prompt,
    PassthroughVap,
    PassthroughLlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainableKind {
    Lr,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CvKind {
    Kfold,
    Loo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    BalancedAccuracy,
    F1,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long, value_enum)]
    pub kind: CorpusKind,

    /// CCPE data.json, or an ICC `participant_id,response_frame` CSV
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,

    /// Output data directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Silence inserted after every CCPE turn, in seconds
    #[arg(long, default_value_t = 2.0)]
    pub gap_s: f64,

    /// Speaking rate used to size CCPE utterances
    #[arg(long, default_value_t = 2.5)]
    pub words_per_s: f64,

    #[arg(long, default_value_t = 50)]
    pub frame_rate: u32,

    /// ICC recording length in frames (required for icc)
    #[arg(long)]
    pub total_frames: Option<usize>,

    /// ICC recording id [default: input file stem]
    #[arg(long)]
    pub name: Option<String>,

    /// ICC participant count, including those who never responded [default: distinct ids]
    #[arg(long)]
    pub participants: Option<usize>,

    /// Fraction of ICC participants that must agree
    #[arg(long, default_value_t = 0.30)]
    pub agreement: f64,

    /// Frames each ICC response covers on either side
    #[arg(long, default_value_t = 37)]
    pub smear_frames: usize,

    /// Event shift in frames [default: -90 for icc, 0 for ccpe]
    #[arg(long, allow_hyphen_values = true)]
    pub offset_frames: Option<i64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output data directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    #[arg(long, default_value_t = 12)]
    pub count: usize,

    /// Frames per recording
    #[arg(long, default_value_t = 3000)]
    pub frames: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct EvalOpts {
    /// Half-width of the acceptance window around each event, in frames
    #[arg(long, default_value_t = 75)]
    pub window_frames: usize,

    /// Do not consider inverted predictions during the sweep
    #[arg(long)]
    pub no_flip: bool,

    #[arg(long, value_enum, default_value_t = ObjectiveArg::BalancedAccuracy)]
    pub objective: ObjectiveArg,
}

#[derive(Debug, Clone, Args)]
pub struct LrOpts {
    /// Full-batch gradient steps for logistic regression
    #[arg(long, default_value_t = 500)]
    pub lr_epochs: usize,

    /// Initial logistic-regression step size
    #[arg(long, default_value_t = 0.1)]
    pub lr_step: f64,

    /// L2 penalty on logistic-regression weights
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
}

#[derive(Debug, Clone, Args)]
pub struct LstmOpts {
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,

    #[arg(long, default_value_t = 2)]
    pub layers: usize,

    #[arg(long, default_value_t = 4)]
    pub heads: usize,

    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,

    #[arg(long, default_value_t = 20)]
    pub epochs: usize,

    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,

    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,

    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,

    /// Training chunk and inference window length, in frames
    #[arg(long, default_value_t = 100)]
    pub seq_len: usize,

    /// Focal-loss focusing parameter
    #[arg(long, default_value_t = 3.0)]
    pub gamma: f64,

    /// Focal-loss positive-class weight
    #[arg(long, default_value_t = 0.75)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args)]
pub struct PromptOpts {
    /// prompt1, prompt2, prompt3, or a file holding a system message
    #[arg(long, default_value = "prompt2")]
    pub prompt_template: String,

    /// Spawn this NDJSON responder per recording [default: replay <rec>.replies.csv]
    #[arg(long, value_name = "CMD")]
    pub llm_command: Option<String>,

    /// Connect to an NDJSON responder on this unix socket per recording
    #[arg(long, value_name = "PATH", conflicts_with = "llm_command")]
    pub llm_socket: Option<PathBuf>,

    /// Per-exchange reply timeout, in seconds
    #[arg(long, default_value_t = 30.0)]
    pub llm_timeout_s: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Data directory of <rec>.truth.csv, <rec>.vap.csv and <rec>.llm.csv files
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,

    #[arg(long, value_enum)]
    pub ensemble: TrainableKind,

    /// Model file to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Training-history CSV [default: <out>.history.csv]
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,

    /// Validation data directory; fills the validation columns of the LSTM history
    #[arg(long, value_name = "DIR")]
    pub val_data: Option<PathBuf>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Half-width of the supervision window around each event, in frames
    #[arg(long, default_value_t = 75)]
    pub window_frames: usize,

    #[command(flatten)]
    pub lr: LrOpts,

    #[command(flatten)]
    pub lstm: LstmOpts,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Data directory of <rec>.truth.csv, <rec>.vap.csv and <rec>.llm.csv files
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,

    #[arg(long, value_enum)]
    pub ensemble: EnsembleKind,

    /// Pretrained lr or lstm model; without it the ensemble is refit on every training fold
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,

    /// Output directory for report.csv and traces/
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Dataset label in the report [default: data directory name]
    #[arg(long)]
    pub dataset_name: Option<String>,

    #[arg(long, value_enum, default_value_t = CvKind::Kfold)]
    pub cv: CvKind,

    #[arg(long, default_value_t = 5)]
    pub folds: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Folds evaluated in parallel
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    /// Time held-out prediction and fill the rtf column (forces --jobs 1)
    #[arg(long)]
    pub measure_rtf: bool,

    /// Skip writing per-recording trace CSVs
    #[arg(long)]
    pub no_traces: bool,

    #[command(flatten)]
    pub eval: EvalOpts,

    #[command(flatten)]
    pub lr: LrOpts,

    #[command(flatten)]
    pub lstm: LstmOpts,

    #[command(flatten)]
    pub prompt: PromptOpts,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Data directory of <rec>.truth.csv, <rec>.vap.csv and <rec>.llm.csv files
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,

    #[arg(long, value_enum)]
    pub ensemble: EnsembleKind,

    /// Pretrained model, required for lr and lstm
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,

    /// Sweep CSV to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Inference window for lstm models, in frames
    #[arg(long, default_value_t = 100)]
    pub seq_len: usize,

    #[command(flatten)]
    pub eval: EvalOpts,

    #[command(flatten)]
    pub prompt: PromptOpts,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report CSVs written by `evaluate`
    #[arg(required = true, value_name = "REPORT")]
    pub inputs: Vec<PathBuf>,

    /// Combined CSV [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Keep only the aggregate row of each run
    #[arg(long)]
    pub aggregate_only: bool,
}

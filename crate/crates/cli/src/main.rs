mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

/// Head and eye gesture recognition from egocentric frame-pair homographies.
#[derive(Debug, Parser)]
#[command(name = "egogesture", version)]
struct Cli {
    /// Worker threads for feature extraction and repeated runs
    /// [env: EGOGESTURE_THREADS]
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Gen(GenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write report CSVs.
    Eval(EvalArgs),
    /// Run K-frame streaming recognition over one sequence.
    Stream(StreamArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Train across one experiment axis and write long-format histories.
    Sweep(SweepArgs),
    /// Summarize a checkpoint.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20, value_parser = parse_fps)]
    fps: u32,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=4))]
    actors: u32,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(5..=6))]
    classes: u32,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
    #[arg(long, default_value_t = 10)]
    sessions_per_actor: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FeaturesArg {
    Raw8,
    Descriptor16,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ChannelsArg {
    World,
    Eye,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DecayArg {
    Decoupled,
    L2,
}

/// Options shared by `train` and `sweep`.
#[derive(Debug, Args)]
struct ModelOpts {
    #[arg(long, value_enum, default_value_t = FeaturesArg::Descriptor16)]
    features: FeaturesArg,
    #[arg(long, value_enum, default_value_t = ChannelsArg::Both)]
    channels: ChannelsArg,
    #[arg(long, default_value_t = 1.0)]
    alpha_w: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha_e: f64,
    /// stratified, stratified:FRACTION, actor:ID or scene:{indoor|outdoor}
    #[arg(long, default_value = "stratified")]
    split: String,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// five, six or binary:<Class>
    #[arg(long, default_value = "five")]
    task: String,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-2)]
    weight_decay: f64,
    #[arg(long, value_enum, default_value_t = DecayArg::Decoupled)]
    decay: DecayArg,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelOpts,
    /// Independent runs with derived seeds; the best one is checkpointed.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    repeats: u64,
    /// History CSV path [default: CKPT with a .history.csv suffix]
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EvalOn {
    /// Whole sequences with the hidden state carried.
    All,
    /// The validation snippets of the checkpoint's training run.
    Val,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalOn::All)]
    on: EvalOn,
    /// Vote window for the per-sequence time diagrams.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
}

#[derive(Debug, Args)]
struct StreamArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// A sequence frame file, or `-` for standard input.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long)]
    no_carry: bool,
    /// Frame rate of the input, used for onset windows and the budget.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    fps: u32,
    /// Where to write the time diagram CSV.
    #[arg(long)]
    time_diagram: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// D,H,N,T,M
    #[arg(long, default_value = "4,8,3,5,2")]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale the forget-gate input weight gradient before comparing.
    #[arg(long, hide = true)]
    corrupt_forget: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Axis {
    Hidden,
    Fps,
    AlphaW,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    axis: Axis,
    /// Comma-separated settings.
    #[arg(long)]
    values: String,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    repeats: u64,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelOpts,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Print the summary as JSON.
    #[arg(long)]
    json: bool,
}

fn parse_fps(s: &str) -> Result<u32, String> {
    match s.parse::<u32>() {
        Ok(f) if egogesture::kinematics::SUPPORTED_FRAME_RATES.contains(&f) => Ok(f),
        _ => Err(format!("frame rate must be one of {:?}", egogesture::kinematics::SUPPORTED_FRAME_RATES)),
    }
}

fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var("EGOGESTURE_THREADS") {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("EGOGESTURE_THREADS={v:?} is not a thread count"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    egogesture::init_threads(thread_count(cli.threads)?);
    match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Stream(a) => commands::stream(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e, CliError::CheckFailed) {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.code())
        }
    }
}

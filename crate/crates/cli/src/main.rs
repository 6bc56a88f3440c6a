//! `scenessl`: dataset preparation, grid execution, evaluation, BEST
//! comparison and plot-data emission.
//!
//! Exit codes: 0 success, 1 partial grid failure, 2 usage/config/data error.

mod commands;
mod listing;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use scene_ssl::train::RUN_DIR_ENV;

#[derive(Parser, Debug)]
#[command(name = "scenessl", version, about = "Desk-scale SSL pretext training, scene fine-tuning and BEST comparison")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dataset manifests.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Generate the procedural toy scene set.
    Toygen(ToygenArgs),
    /// Cross-validated variant grids.
    Grid {
        #[command(subcommand)]
        command: GridCommand,
    },
    /// Evaluate a checkpoint on a manifest.
    Evaluate(EvaluateArgs),
    /// Bayesian comparison of two variants from a run table.
    Best(BestArgs),
    /// Emit plot-ready tab-separated data.
    Plotdata(PlotArgs),
}

#[derive(Subcommand, Debug)]
enum DataCommand {
    /// Remap a listing onto Places8 and carve a stratified test split.
    Prepare(PrepareArgs),
}

#[derive(Subcommand, Debug)]
enum GridCommand {
    /// Run every variant × repetition × fold cell of a grid config.
    Run(GridRunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum RemapChoice {
    /// The 23-category → 8-class Places8 table.
    Places8,
    /// Keep the listing's existing class assignment.
    None,
}

#[derive(clap::Args, Debug)]
struct PrepareArgs {
    /// Image directory (`<letter>/<category>/...` or `<category>/...`), a
    /// Places365-style file list (`/b/bedroom/0001.jpg 3` per line), or an
    /// existing manifest.
    #[arg(long)]
    listing: PathBuf,
    #[arg(long, value_enum, default_value = "places8")]
    remap: RemapChoice,
    /// Fraction of each class's training rows moved to the test split; in (0, 1).
    #[arg(long, default_value_t = 0.1)]
    test_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output manifest path; uris are written relative to its directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct ToygenArgs {
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 120)]
    per_class: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    test_frac: f64,
    /// Extra unlabeled synthetic-tagged images per class for pretext pools.
    #[arg(long, default_value_t = 0)]
    synthetic_per_class: usize,
    /// Output directory; receives `images/` and `manifest.tsv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct GridRunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Concurrent cells; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Reuse committed cells in the run directory.
    #[arg(long)]
    resume: bool,
    /// Run directory; defaults to `$SCENESSL_RUN_DIR`, else `runs/<grid name>`.
    #[arg(long, env = RUN_DIR_ENV)]
    run_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

#[derive(clap::Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Tab-separated `uri<TAB>group` lines; adds one metric row per group.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Manifest split to evaluate.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitChoice,
    /// Grid config whose downstream normalization to use (defaults otherwise).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Directory for summary, audit, confusion and grouped tables.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PoolingChoice {
    /// All repetitions × folds as one sample (n = reps·k).
    Pooled,
    /// Per-fold means over repetitions (n = k).
    FoldAveraged,
}

#[derive(clap::Args, Debug)]
struct BestArgs {
    /// Run table (`runs.tsv`) or a run directory; defaults to `$SCENESSL_RUN_DIR`.
    #[arg(long, env = RUN_DIR_ENV)]
    results: PathBuf,
    #[arg(long, default_value = "balanced_acc")]
    metric: String,
    /// Variants A and B; Δ = A − B.
    #[arg(long, num_args = 2, value_names = ["A", "B"], required = true)]
    pair: Vec<String>,
    #[arg(long, value_enum, default_value = "pooled")]
    pooling: PoolingChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 5000)]
    draws: usize,
    #[arg(long, default_value_t = 2000)]
    warmup: usize,
    /// Also write the comparison report table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PlotKind {
    /// Five-number summary per variant from a run table.
    Box,
    /// (epoch, lr) series from a metrics table or a grid config.
    LrCurve,
    /// Row-normalized confusion percentages from counts table(s).
    Confusion,
}

#[derive(clap::Args, Debug)]
struct PlotArgs {
    /// Input: run table or run directory (box), metrics table (lr-curve),
    /// counts table or directory of `*.confusion.tsv` (confusion).
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: PlotKind,
    /// Metric for box data.
    #[arg(long, default_value = "balanced_acc")]
    metric: String,
    /// lr-curve from a grid config's schedule instead of a metrics table.
    #[arg(long, conflicts_with = "results")]
    config: Option<PathBuf>,
    /// Stage of the config schedule: pretext, object or downstream.
    #[arg(long, default_value = "downstream")]
    stage: String,
    /// Samples per epoch for config lr-curves.
    #[arg(long, default_value_t = 1)]
    points_per_epoch: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Data { command: DataCommand::Prepare(a) } => commands::prepare(&a),
        Command::Toygen(a) => commands::toygen(&a),
        Command::Grid { command: GridCommand::Run(a) } => commands::grid_run(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Best(a) => commands::best(&a),
        Command::Plotdata(a) => plot::plotdata(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

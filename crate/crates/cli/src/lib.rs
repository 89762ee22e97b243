//! `mapbench` command-line interface.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod pipeline;

use pipeline::Stage;

#[derive(Debug, Parser)]
#[command(name = "mapbench", version, about = "Predict SLAM localization performance from floor plans")]
pub struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for every stochastic stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch stages (default: logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Settings file (flat `key = value` TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    /// Occupancy image (PGM or PNG).
    pub image: PathBuf,
    /// Metres per pixel; overrides the sidecar.
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Grey levels at or below this are occupied.
    #[arg(long, default_value_t = 50)]
    pub occ_thresh: u8,
    /// Grey levels at or above this are free.
    #[arg(long, default_value_t = 205)]
    pub free_thresh: u8,
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    /// Confidence level for the sample-size rule.
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Margin of error on translation (m).
    #[arg(long)]
    pub margin_t: Option<f64>,
    /// Margin of error on rotation (rad).
    #[arg(long)]
    pub margin_r: Option<f64>,
    /// Pilot pairs used to estimate the variance.
    #[arg(long)]
    pub pilot_pairs: Option<usize>,
    /// absolute or squared residuals.
    #[arg(long)]
    pub mode: Option<String>,
    /// Use z instead of z^2 in the sample-size rule.
    #[arg(long)]
    pub linear_z: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Summarize an occupancy map and its interior.
    MapInfo(MapArgs),
    /// Build the sparsified Voronoi graph of a map.
    Voronoi {
        #[command(flatten)]
        map: MapArgs,
        /// Graph JSON output (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skeleton overlay PNG.
        #[arg(long)]
        debug_png: Option<PathBuf>,
    },
    /// Extract VTD/VTR and structural features of a map, or of every
    /// environment in a manifest.
    Features {
        /// Occupancy image, or a manifest.json for batch mode.
        input: PathBuf,
        #[arg(long)]
        resolution: Option<f64>,
        /// Start position in metres, `x,y`.
        #[arg(long, value_parser = parse_pair)]
        start: Option<(f64, f64)>,
        /// Sensor range (m).
        #[arg(long)]
        sensor_range: Option<f64>,
        /// Sensor field of view (degrees).
        #[arg(long)]
        fov_deg: Option<f64>,
        /// Keep the traversal legs in the output.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Localization error of one run log.
    EvalRun {
        run: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
        /// Use every pose pair instead of a sample.
        #[arg(long)]
        exhaustive: bool,
    },
    /// Performance vector over the runs of one environment.
    EvalEnv {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[command(flatten)]
        sampling: SamplingArgs,
        /// Environment id used to derive per-run seeds.
        #[arg(long, default_value = "env")]
        env_id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a regression model on a dataset CSV.
    Fit {
        dataset: PathBuf,
        #[arg(long)]
        target: String,
        /// ols, enet or gp.
        #[arg(long)]
        model: Option<String>,
        /// Feature columns (comma separated).
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<String>>,
        /// Select this many features by F score instead of `--features`.
        #[arg(long)]
        k_best: Option<usize>,
        /// Cross-validation folds.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        l1: Option<f64>,
        #[arg(long)]
        l2: Option<f64>,
        #[arg(long)]
        length_scale: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        /// Grid-search GP hyperparameters by marginal likelihood.
        #[arg(long)]
        optimize: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict performance from model files and a features file (last).
    Predict {
        #[arg(required = true, num_args = 2..)]
        files: Vec<PathBuf>,
    },
    /// Cross-validation table for every target of a dataset.
    Report {
        dataset: PathBuf,
        /// Report all four components (the default).
        #[arg(long)]
        all_targets: bool,
        #[arg(long, conflicts_with = "all_targets")]
        target: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<String>>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a manifest and the files it references.
    Validate { manifest: PathBuf },
    /// Run the batch stages over a manifest.
    Pipeline {
        manifest: PathBuf,
        /// Stages to run (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "features,eval,fit,predict")]
        stages: Vec<Stage>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
    },
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `x,y`, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((p(a)?, p(b)?))
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 success, 1 domain error, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("MAPBENCH_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

//! `radsearch`: scene generation, aerial survey simulation, radiation
//! analysis, DEM-based label refinement, segmentation-weighted path planning,
//! UGV mission simulation and report rendering, as one deterministic
//! pipeline driven by seeds and config files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use radsearch_cli::commands::{self, RefineArgs, ReportArgs};
use radsearch_cli::config::resolve_config;
use radsearch_cli::error::CliError;
use radsearch_cli::VERSION_LINE;

#[derive(Parser)]
#[command(name = "radsearch", version = VERSION_LINE, about = "radiation search mission simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Mission config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed (mandatory when no config file carries one).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (beats RADSEARCH_OUT and the config value).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic test area: DEM, labels, orthophoto, unary
    /// scores, legend, default sources and truth metadata.
    SceneGen {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fly the boustrophedon survey and record measurements and captures.
    Survey {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare a source flight against a background flight and extract the
    /// point of interest.
    Analyze {
        /// Source-flight measurements CSV.
        #[arg(long)]
        measurements: PathBuf,
        /// Background-flight measurements CSV.
        #[arg(long)]
        background: PathBuf,
        /// Output analysis JSON path.
        #[arg(long, default_value = "analysis.json")]
        out: PathBuf,
    },
    /// Refine labels with DEM obstacle regions; score against truth when
    /// given.
    Refine {
        /// Directory holding unary_c0..5.asc score grids.
        #[arg(long)]
        unaries: Option<PathBuf>,
        /// Label raster to refine when no unaries exist (one-hot scores).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        dem: PathBuf,
        /// Ground-truth labels for metrics.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Gradient threshold; auto (mean + 2 sigma) when omitted.
        #[arg(long)]
        tau: Option<f64>,
        /// Morphological closing iterations.
        #[arg(long, default_value_t = 2)]
        n_close: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Plan a path from a plan-request JSON.
    Plan {
        #[arg(long)]
        request: PathBuf,
        #[arg(long, default_value = "path.json")]
        out: PathBuf,
    },
    /// Run the UGV mission simulation.
    Sim {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Inclusive seed range `a..b`; one mission per seed on worker
        /// threads, outputs keyed by seed.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Render SVG plots and PPM path overlays from pipeline outputs.
    Report {
        /// Measurements CSV for a counts histogram.
        #[arg(long)]
        measurements: Option<PathBuf>,
        /// Mission log JSONL for a counts-over-time plot.
        #[arg(long)]
        mission_log: Option<PathBuf>,
        /// Path JSON for a map overlay (requires --labels).
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Obstacle script drawn into the overlay.
        #[arg(long)]
        obstacles: Option<PathBuf>,
        /// Histogram bin width in counts.
        #[arg(long, default_value_t = 10.0)]
        bin_width: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_seed_range(s: &str) -> Result<(u64, u64), CliError> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| CliError::config(format!("seed range must look like a..b, got `{s}`")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<u64>()
            .map_err(|_| CliError::config(format!("bad seed `{v}` in range `{s}`")))
    };
    Ok((parse(a)?, parse(b)?))
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::SceneGen { cfg } => {
            let cfg = resolve_config(cfg.config.as_deref(), cfg.seed, cfg.out.as_deref())?;
            commands::cmd_scene_gen(&cfg)
        }
        Command::Survey { cfg } => {
            let cfg = resolve_config(cfg.config.as_deref(), cfg.seed, cfg.out.as_deref())?;
            commands::cmd_survey(&cfg)
        }
        Command::Analyze {
            measurements,
            background,
            out,
        } => commands::cmd_analyze(&measurements, &background, &out),
        Command::Refine {
            unaries,
            labels,
            dem,
            truth,
            tau,
            n_close,
            out,
        } => commands::cmd_refine(&RefineArgs {
            unaries_dir: unaries,
            labels,
            dem,
            truth,
            tau,
            closing_iterations: n_close,
            out_dir: out,
        }),
        Command::Plan { request, out } => commands::cmd_plan(&request, &out),
        Command::Sim { cfg, seeds } => {
            let cfg = resolve_config(cfg.config.as_deref(), cfg.seed, cfg.out.as_deref())?;
            let range = seeds.as_deref().map(parse_seed_range).transpose()?;
            commands::cmd_sim(&cfg, range)
        }
        Command::Report {
            measurements,
            mission_log,
            path,
            labels,
            obstacles,
            bin_width,
            out,
        } => commands::cmd_report(&ReportArgs {
            measurements,
            mission_log,
            path_json: path,
            labels,
            obstacles,
            bin_width,
            out_dir: out,
        }),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.emit();
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

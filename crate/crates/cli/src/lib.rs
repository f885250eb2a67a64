//! The `matchkit` command line: `match`, `sweep` and `synth`.
//!
//! Exit codes are 0 on success, 1 for any input or I/O error and 2 when the
//! robust stage fails to converge.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use matchkit_core::io::{load_features, load_homography, save_features, save_homography, save_match_pairs};
use matchkit_core::{
    generate_scene, run_pipeline, sweep_tg, sweep_tw, FeatureSet, Homography, MatchError, MetricMode, MetricsReport,
    PipelineConfig, ProsacMode, Radius, Stage, SweepRecord, SynthConfig,
};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_NOT_CONVERGED: u8 = 2;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "MATCHKIT_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] MatchError),
}

#[derive(Debug, Parser)]
#[command(
    name = "matchkit",
    version,
    about = "Binary feature matching with a four-stage refinement cascade"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Match two feature files and report every stage.
    Match(MatchArgs),
    /// Sweep the ratio threshold (tw) or the support threshold (tg).
    Sweep(SweepArgs),
    /// Write a synthetic scene with known ground truth.
    Synth(SynthArgs),
}

/// Pipeline parameters; anything left out keeps its default.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Ratio-test threshold [default: 0.66]
    #[arg(long)]
    pub tw: Option<f64>,
    /// Minimum neighborhood support [default: 6]
    #[arg(long)]
    pub tg: Option<usize>,
    /// Neighborhood radius in pixels, or "auto" for 5% of the image diagonal
    #[arg(long)]
    pub radius: Option<Radius>,
    /// Inlier transfer-error threshold in pixels [default: 3.0]
    #[arg(long = "inlier-thresh")]
    pub inlier_thresh: Option<f64>,
    /// Inliers needed to call the robust stage converged [default: 10]
    #[arg(long)]
    pub min_inliers: Option<usize>,
    /// Hypothesis budget of the robust stage [default: 2000]
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// standard or grouped [default: standard]
    #[arg(long)]
    pub prosac_mode: Option<ProsacMode>,
    /// displacement or gt_transfer [default: displacement]
    #[arg(long)]
    pub metric_mode: Option<MetricMode>,
}

impl ConfigArgs {
    pub fn to_config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        if let Some(v) = self.tw {
            cfg.t_w = v;
        }
        if let Some(v) = self.tg {
            cfg.t_g = v;
        }
        if let Some(v) = self.radius {
            cfg.neighborhood_radius = v;
        }
        if let Some(v) = self.inlier_thresh {
            cfg.inlier_threshold = v;
        }
        if let Some(v) = self.min_inliers {
            cfg.min_inliers = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iterations = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.prosac_mode {
            cfg.prosac_mode = v;
        }
        if let Some(v) = self.metric_mode {
            cfg.metric_mode = v;
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Target feature file (JSON)
    pub target: PathBuf,
    /// Reference feature file (JSON)
    pub reference: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Last stage to run: knn, tf, gms or prosac
    #[arg(long, default_value = "prosac")]
    pub stop_after: Stage,
    /// Ground-truth homography file (target to reference)
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Also write one CSV row per stage here
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write the JSON report here
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Tw,
    Tg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub kind: SweepKind,
    pub target: PathBuf,
    pub reference: PathBuf,
    /// Comma-separated thresholds [default: 0.1,...,0.9 for tw, 1,...,9 for tg]
    #[arg(long)]
    pub grid: Option<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Also write the CSV here
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory to write the scene into; created if missing
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub n_inliers: Option<usize>,
    #[arg(long)]
    pub n_outliers: Option<usize>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    /// Per-axis position noise of inliers in pixels
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Bits flipped between the two descriptors of an inlier
    #[arg(long)]
    pub flips: Option<usize>,
    /// Departure of the ground truth from identity, in [0, 0.3]
    #[arg(long)]
    pub perspective: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub cluster_radius: Option<f64>,
    #[arg(long)]
    pub confusers: Option<usize>,
}

impl SynthArgs {
    pub fn to_config(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            n_inliers: self.n_inliers.unwrap_or(d.n_inliers),
            n_outliers: self.n_outliers.unwrap_or(d.n_outliers),
            image_size: (
                self.width.unwrap_or(d.image_size.0),
                self.height.unwrap_or(d.image_size.1),
            ),
            noise_sigma: self.sigma.unwrap_or(d.noise_sigma),
            descriptor_flip_bits: self.flips.unwrap_or(d.descriptor_flip_bits),
            perspective_magnitude: self.perspective.unwrap_or(d.perspective_magnitude),
            seed: self.seed.unwrap_or(d.seed),
            clusters: self.clusters.unwrap_or(d.clusters),
            cluster_radius: self.cluster_radius.unwrap_or(d.cluster_radius),
            confusers: self.confusers.unwrap_or(d.confusers),
        }
    }
}

/// File names written by `synth`.
pub const SYNTH_TARGET: &str = "target.json";
pub const SYNTH_REFERENCE: &str = "reference.json";
pub const SYNTH_GT_H: &str = "gt_homography.txt";
pub const SYNTH_GT_INLIERS: &str = "gt_inliers.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCount {
    pub label: String,
    pub nm: usize,
}

/// The JSON document printed by `match`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub stages: Vec<StageCount>,
    /// Metrics of the last stage; null when it kept nothing.
    pub metrics: Option<MetricsReport>,
    /// Row-major estimate; null unless the robust stage produced one.
    pub homography: Option<[f64; 9]>,
    /// `[query_idx, train_idx]` of every match kept by the last stage.
    pub inliers: Vec<[usize; 2]>,
}

/// One CSV row of `match`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRow {
    pub stage: String,
    pub nm: usize,
    pub rep: Option<f64>,
    pub me: Option<f64>,
    pub rmse: Option<f64>,
    pub correct: Option<usize>,
}

fn input_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

/// Loads a target and reference pair; the reference needs two features for
/// a second-neighbor distance.
pub fn load_pair(target: &Path, reference: &Path) -> Result<(FeatureSet, FeatureSet), CliError> {
    let t = load_features(target)?;
    let r = load_features(reference)?;
    if r.len() < 2 {
        return Err(CliError::Input(format!(
            "empty/insufficient reference: {} has {} feature(s), need at least 2",
            reference.display(),
            r.len()
        )));
    }
    Ok((t, r))
}

/// Runs the cascade and builds the report, the CSV rows and the convergence flag.
pub fn match_report(
    target: &FeatureSet,
    reference: &FeatureSet,
    cfg: &PipelineConfig,
    stop_after: Stage,
    gt: Option<&Homography>,
) -> Result<(MatchReport, Vec<StageRow>, bool), CliError> {
    if cfg.metric_mode == MetricMode::GtTransfer && gt.is_none() {
        return Err(CliError::Input("metric mode gt_transfer needs --gt".into()));
    }
    let run = run_pipeline(target, reference, cfg, stop_after)?;
    let metrics = run.stage_metrics(target, reference, cfg.metric_mode, gt, cfg.inlier_threshold)?;

    let rows = run
        .stages
        .iter()
        .zip(&metrics)
        .map(|(s, m)| StageRow {
            stage: s.stage().label().to_string(),
            nm: s.len(),
            rep: m.as_ref().map(|m| m.rep),
            me: m.as_ref().map(|m| m.me),
            rmse: m.as_ref().map(|m| m.rmse),
            correct: m.as_ref().and_then(|m| m.correct),
        })
        .collect();
    let report = MatchReport {
        stages: run
            .counts()
            .into_iter()
            .map(|(stage, nm)| StageCount {
                label: stage.label().to_string(),
                nm,
            })
            .collect(),
        metrics: metrics.last().cloned().flatten(),
        homography: run.homography().map(|h| h.to_rows()),
        inliers: run
            .final_matches()
            .matches()
            .iter()
            .map(|c| [c.query_idx, c.train_idx])
            .collect(),
    };
    Ok((report, rows, run.converged()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| input_error(path, e))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Input(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Input(e.to_string()))
}

fn emit(out: &mut dyn Write, bytes: &[u8]) -> Result<(), CliError> {
    out.write_all(bytes)
        .map_err(|e| CliError::Input(format!("writing output: {e}")))
}

pub fn cmd_match(args: &MatchArgs, out: &mut dyn Write) -> Result<u8, CliError> {
    let cfg = args.config.to_config();
    cfg.validate()?;
    let (target, reference) = load_pair(&args.target, &args.reference)?;
    let gt = args.gt.as_deref().map(load_homography).transpose()?;
    let (report, rows, converged) = match_report(&target, &reference, &cfg, args.stop_after, gt.as_ref())?;

    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    emit(out, json.as_bytes())?;
    if let Some(path) = &args.json {
        write_file(path, json.as_bytes())?;
    }
    if let Some(path) = &args.csv {
        write_file(path, &csv_bytes(&rows)?)?;
    }
    if converged {
        Ok(EXIT_OK)
    } else {
        eprintln!("robust stage did not converge");
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn parse_grid<T: std::str::FromStr>(text: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Input(format!("bad grid value '{}'", s.trim())))
        })
        .collect()
}

pub fn sweep_records(
    kind: SweepKind,
    target: &FeatureSet,
    reference: &FeatureSet,
    cfg: &PipelineConfig,
    grid: Option<&str>,
) -> Result<Vec<SweepRecord>, CliError> {
    Ok(match kind {
        SweepKind::Tw => {
            let grid = match grid {
                Some(g) => parse_grid(g)?,
                None => (1..=9).map(|i| i as f64 / 10.0).collect(),
            };
            sweep_tw(target, reference, &grid)?
        }
        SweepKind::Tg => {
            let grid = match grid {
                Some(g) => parse_grid(g)?,
                None => (1..=9).collect(),
            };
            sweep_tg(target, reference, cfg, &grid)?
        }
    })
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<u8, CliError> {
    let cfg = args.config.to_config();
    cfg.validate()?;
    let (target, reference) = load_pair(&args.target, &args.reference)?;
    let records = sweep_records(args.kind, &target, &reference, &cfg, args.grid.as_deref())?;
    let bytes = csv_bytes(&records)?;
    emit(out, &bytes)?;
    if let Some(path) = &args.csv {
        write_file(path, &bytes)?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<u8, CliError> {
    let scene = generate_scene(&args.to_config())?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| input_error(dir, e))?;
    save_features(dir.join(SYNTH_TARGET), &scene.target)?;
    save_features(dir.join(SYNTH_REFERENCE), &scene.reference)?;
    if let Some(h) = &scene.gt_h {
        save_homography(dir.join(SYNTH_GT_H), h)?;
    }
    if let Some(pairs) = &scene.gt_inlier_pairs {
        save_match_pairs(dir.join(SYNTH_GT_INLIERS), pairs)?;
    }
    for name in [SYNTH_TARGET, SYNTH_REFERENCE, SYNTH_GT_H, SYNTH_GT_INLIERS] {
        emit(out, format!("{}\n", dir.join(name).display()).as_bytes())?;
    }
    Ok(EXIT_OK)
}

/// Sizes the global worker pool from the value of [`THREADS_ENV`].
pub fn configure_threads(value: Option<&str>) -> Result<(), CliError> {
    let Some(v) = value else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(e.to_string()))
}

/// Runs a parsed command and returns the process exit code. Errors go to stderr.
pub fn run(cli: &Cli, out: &mut dyn Write) -> u8 {
    let result = match &cli.command {
        Command::Match(a) => cmd_match(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_INPUT
    })
}

//! The `relpose` command line.
//!
//! Every subcommand writes its outputs and a `config.json` snapshot of its
//! parameters under `--out`. Exit status is 0 on success, 1 when the run
//! fails and 2 for usage errors.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::Serialize;

use crate::camera::{overlapping_pairs, write_pairs_csv, CameraIntrinsics, Scene, DEFAULT_FAR, DEFAULT_NEAR};
use crate::epipolar::{estimate_relative_pose, read_matches_csv, CorrespondenceSet, RansacConfig};
use crate::eval::{
    default_bin_edges, pair_errors, plot_cumulative, read_predictions_csv, summarize, write_predictions_csv,
    write_summary_csv, ErrorReport, EvalError, Metric,
};
use crate::geom::{relative_pose, roe, rte, Quaternion, RelativePose};
use crate::regressor::{
    build_model, load_samples, load_weights, predict_samples, save_weights, train, write_train_log, ModelConfig,
    Preset, TrainConfig,
};
use crate::synth::{
    build_dataset, load_manifest, make_box_correspondences, sample_pair_pose, BoxScene, DatasetConfig, DatasetInfo,
    MatchNoise, PlanarScene, Texture,
};
use crate::Error;

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "RELPOSE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "relpose", version, about = "Relative camera pose estimation toolkit")]
pub struct Cli {
    /// Worker count (default: $RELPOSE_THREADS, else 1). Work is currently
    /// executed sequentially; the value is validated and recorded.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic image-pair dataset with train/val manifests.
    GenData(GenDataArgs),
    /// List overlapping camera pairs of a scene file.
    Pairs(PairsArgs),
    /// Train a Siamese regressor.
    Train(TrainArgs),
    /// Predict relative poses for every pair of a manifest.
    Predict(PredictArgs),
    /// Essential-matrix baseline on a match file or a generated manifest.
    Baseline(BaselineArgs),
    /// Score predictions against a manifest.
    Eval(EvalArgs),
    /// Merge evaluation reports into one comparison.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    /// Number of image pairs.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Fraction of pairs in the training split.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    #[arg(long, default_value_t = 0.8)]
    pub focal_ratio: f64,
    #[arg(long, default_value_t = 1.0)]
    pub plane_distance: f64,
    #[arg(long, default_value_t = 30.0)]
    pub max_rotation: f64,
    #[arg(long, default_value_t = 0.3)]
    pub baseline_ratio: f64,
    /// Use one texture for every pair.
    #[arg(long)]
    pub texture_seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct PairsArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NEAR)]
    pub near: f64,
    #[arg(long, default_value_t = DEFAULT_FAR)]
    pub far: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training manifest (JSON Lines).
    #[arg(long)]
    pub train: PathBuf,
    /// Validation manifest.
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long, default_value = "tiny")]
    pub preset: String,
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub wd: f64,
    /// Mini-batch size (default 128, 32 for the tiny preset).
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Start from these weights instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value = "tiny")]
    pub preset: String,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    /// Match CSV (`u1,v1,u2,v2`) of one image pair; needs --intrinsics.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub matches: Option<PathBuf>,
    /// Intrinsics JSON of the first view (and of the second unless
    /// --intrinsics2 is given).
    #[arg(long, requires = "matches")]
    pub intrinsics: Option<PathBuf>,
    #[arg(long, requires = "matches")]
    pub intrinsics2: Option<PathBuf>,
    /// Manifest written by gen-data: each pair's cameras are regenerated
    /// from its seed and matched on an off-plane point cloud.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Correspondences per synthetic pair.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Gaussian pixel noise of synthetic matches.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Outlier fraction of synthetic matches.
    #[arg(long, default_value_t = 0.3)]
    pub outliers: f64,
    /// Inlier threshold on the Sampson distance, normalized units.
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.999)]
    pub confidence: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Predictions CSV (`pair_id,qw,qx,qy,qz,tx,ty,tz`), aligned by row.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Method tag used in the report.
    #[arg(long, default_value = "method")]
    pub method: String,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Report JSON files written by `eval`.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Snapshot<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    threads: usize,
    args: &'a T,
}

fn cli_err(msg: impl Into<String>) -> Error {
    Error::Cli(msg.into())
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| cli_err(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, bytes).map_err(|e| cli_err(format!("{}: {e}", path.display())))
}

fn write_snapshot<T: Serialize>(out: &Path, command: &str, threads: usize, args: &T) -> Result<(), Error> {
    ensure_dir(out)?;
    let snap = Snapshot { command, version: env!("CARGO_PKG_VERSION"), threads, args };
    let json = serde_json::to_string_pretty(&snap).map_err(|e| cli_err(e.to_string()))?;
    write_file(&out.join("config.json"), json + "\n")
}

fn resolve_threads(flag: Option<usize>) -> Result<usize, Error> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| cli_err(format!("{THREADS_ENV}={v:?} is not a count")))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(cli_err("thread count must be at least 1"));
    }
    Ok(n)
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), Error> {
    let threads = resolve_threads(cli.threads)?;
    match &cli.command {
        Command::GenData(a) => gen_data(a, threads),
        Command::Pairs(a) => pairs(a, threads),
        Command::Train(a) => train_cmd(a, threads),
        Command::Predict(a) => predict(a, threads),
        Command::Baseline(a) => baseline(a, threads),
        Command::Eval(a) => eval_cmd(a, threads),
        Command::Report(a) => report(a, threads),
    }
}

fn gen_data(a: &GenDataArgs, threads: usize) -> Result<(), Error> {
    write_snapshot(&a.out, "gen-data", threads, a)?;
    let cfg = DatasetConfig {
        image_size: a.size,
        focal_ratio: a.focal_ratio,
        plane_distance: a.plane_distance,
        max_rotation_deg: a.max_rotation,
        max_baseline_ratio: a.baseline_ratio,
        texture_seed: a.texture_seed,
    };
    let (tr, va) = build_dataset(a.n, a.split, &cfg, a.seed, &a.out)?;
    println!("wrote {} train and {} val pairs to {}", tr.len(), va.len(), a.out.display());
    Ok(())
}

fn pairs(a: &PairsArgs, threads: usize) -> Result<(), Error> {
    let scene = Scene::load(&a.scene)?;
    let cams = scene.cameras()?;
    let pairs = overlapping_pairs(&cams, a.near, a.far)?;
    write_snapshot(&a.out, "pairs", threads, a)?;
    let mut buf = Vec::new();
    write_pairs_csv(&mut buf, &pairs).map_err(|e| cli_err(e.to_string()))?;
    write_file(&a.out.join("pairs.csv"), buf)?;
    println!("{} overlapping pairs among {} cameras", pairs.len(), cams.len());
    Ok(())
}

fn train_cmd(a: &TrainArgs, threads: usize) -> Result<(), Error> {
    let preset: Preset = a.preset.parse()?;
    let mut config = ModelConfig::preset(preset);
    config.beta = a.beta;
    let batch = a.batch.unwrap_or(if preset == Preset::Tiny { 32 } else { 128 });
    let cfg = TrainConfig { lr: a.lr, weight_decay: a.wd, batch_size: batch, epochs: a.epochs, seed: a.seed, beta: a.beta };
    write_snapshot(&a.out, "train", threads, a)?;
    let train_set = load_samples(&load_manifest(&a.train)?)?;
    let val_set = load_samples(&load_manifest(&a.val)?)?;
    let mut model = match &a.init {
        Some(p) => load_weights(p, &config)?,
        None => build_model(&config, a.seed)?,
    };
    let log = train(&mut model, &train_set, &val_set, &cfg, |e| {
        eprintln!(
            "epoch {}: loss {:.4}, val median ROE {:.2} deg, RTE {:.2} deg",
            e.epoch, e.train_loss, e.val_median_roe_deg, e.val_median_rte_deg
        )
    })?;
    save_weights(&model, &a.out.join("weights.rpw"))?;
    let mut buf = Vec::new();
    write_train_log(&mut buf, &log).map_err(|e| cli_err(e.to_string()))?;
    write_file(&a.out.join("train_log.csv"), buf)?;
    println!("trained {} for {} epochs; weights in {}", preset, a.epochs, a.out.join("weights.rpw").display());
    Ok(())
}

fn predict(a: &PredictArgs, threads: usize) -> Result<(), Error> {
    let config = ModelConfig::preset(a.preset.parse()?);
    let model = load_weights(&a.weights, &config)?;
    let samples = load_samples(&load_manifest(&a.manifest)?)?;
    let preds = predict_samples(&model, &samples)?;
    write_snapshot(&a.out, "predict", threads, a)?;
    let rows: Vec<(String, RelativePose)> = preds.into_iter().enumerate().map(|(i, p)| (i.to_string(), p)).collect();
    let mut buf = Vec::new();
    write_predictions_csv(&mut buf, &rows).map_err(|e| cli_err(e.to_string()))?;
    write_file(&a.out.join("predictions.csv"), buf)?;
    println!("predicted {} pairs", rows.len());
    Ok(())
}

fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics, Error> {
    let text = fs::read_to_string(path).map_err(|e| cli_err(format!("{}: {e}", path.display())))?;
    let k: CameraIntrinsics =
        serde_json::from_str(&text).map_err(|e| cli_err(format!("{}: {e}", path.display())))?;
    k.validate()?;
    Ok(k)
}

/// Stand-in for a failed estimate so predictions stay aligned with the
/// manifest: identity rotation, forward translation.
fn fallback_pose() -> RelativePose {
    RelativePose { dq: Quaternion::IDENTITY, dt: Vector3::z() }
}

fn baseline(a: &BaselineArgs, threads: usize) -> Result<(), Error> {
    let ransac = RansacConfig { threshold: a.threshold, confidence: a.confidence, max_iters: a.max_iters, seed: a.seed };
    if let Some(matches) = &a.matches {
        let k1_path = a.intrinsics.as_ref().ok_or_else(|| cli_err("--matches needs --intrinsics"))?;
        let k1 = load_intrinsics(k1_path)?;
        let k2 = match &a.intrinsics2 {
            Some(p) => load_intrinsics(p)?,
            None => k1,
        };
        let f = fs::File::open(matches).map_err(|e| cli_err(format!("{}: {e}", matches.display())))?;
        let set = CorrespondenceSet::new(read_matches_csv(BufReader::new(f))?, k1, k2);
        let est = estimate_relative_pose(&set, &ransac)?;
        write_snapshot(&a.out, "baseline", threads, a)?;
        let mut buf = Vec::new();
        write_predictions_csv(&mut buf, &[("0".to_string(), est.pose)]).map_err(|e| cli_err(e.to_string()))?;
        write_file(&a.out.join("predictions.csv"), buf)?;
        let inliers = est.inliers.iter().filter(|&&b| b).count();
        println!("{} ({inliers}/{} inliers)", est.pose, set.len());
        return Ok(());
    }
    let manifest_path = a.manifest.as_ref().ok_or_else(|| cli_err("need --matches or --manifest"))?;
    let manifest = load_manifest(manifest_path)?;
    let info_path = manifest.base.join("dataset.json");
    let info: DatasetInfo = serde_json::from_str(
        &fs::read_to_string(&info_path).map_err(|e| cli_err(format!("{}: {e}", info_path.display())))?,
    )
    .map_err(|e| cli_err(format!("{}: {e}", info_path.display())))?;
    let k = info.intrinsics;
    let d = info.config.plane_distance;
    let cloud = BoxScene { center: Vector3::new(0.0, 0.0, d), half_extent: Vector3::new(0.5 * d, 0.5 * d, 0.3 * d) };
    let noise = MatchNoise { noise_px: a.noise, outlier_ratio: a.outliers };
    let mut rows = Vec::with_capacity(manifest.len());
    let mut status = String::from("pair_id,status,inliers,roe_deg,rte_deg\n");
    for (i, rec) in manifest.records.iter().enumerate() {
        let plane = PlanarScene::new(-Vector3::z(), d, Texture::new(rec.seed))?;
        let poses = sample_pair_pose(rec.seed, &info.config.sampling(), &plane, &k)?;
        let gt = rec.ground_truth()?;
        let regenerated = relative_pose(&poses.0, &poses.1)?;
        if roe(&regenerated.dq, &gt.dq)? > 1e-6 || rte(&regenerated.dt, &gt.dt)? > 1e-6 {
            return Err(cli_err(format!("record {i}: cameras cannot be regenerated from its seed")));
        }
        let (set, _) = make_box_correspondences(&cloud, &poses.1, &k, a.count, &noise, rec.seed)?;
        let (pose, state, inliers) = match estimate_relative_pose(&set, &ransac) {
            Ok(est) => (est.pose, "ok".to_string(), est.inliers.iter().filter(|&&b| b).count()),
            Err(e) => (fallback_pose(), format!("failed: {e}").replace(',', ";"), 0),
        };
        status.push_str(&format!("{i},{state},{inliers},{},{}\n", roe(&pose.dq, &gt.dq)?, rte(&pose.dt, &gt.dt)?));
        rows.push((i.to_string(), pose));
    }
    write_snapshot(&a.out, "baseline", threads, a)?;
    let mut buf = Vec::new();
    write_predictions_csv(&mut buf, &rows).map_err(|e| cli_err(e.to_string()))?;
    write_file(&a.out.join("predictions.csv"), buf)?;
    write_file(&a.out.join("baseline.csv"), status)?;
    println!("estimated {} pairs", rows.len());
    Ok(())
}

fn write_report(report: &ErrorReport, out: &Path) -> Result<(), Error> {
    report.save_json(&out.join("report.json"))?;
    report.save_csv(&out.join("errors.csv"))?;
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, &summarize(std::slice::from_ref(report))).map_err(|e| cli_err(e.to_string()))?;
    write_file(&out.join("summary.csv"), buf)?;
    plot_cumulative(report, Metric::Roe, &out.join("roe.svg"))?;
    plot_cumulative(report, Metric::Rte, &out.join("rte.svg"))?;
    for m in &report.methods {
        println!("{}: median ROE {:.3} deg, median RTE {:.3} deg over {} pairs", m.method, m.median_roe_deg, m.median_rte_deg, m.count);
    }
    Ok(())
}

fn eval_cmd(a: &EvalArgs, threads: usize) -> Result<(), Error> {
    let manifest = load_manifest(&a.manifest)?;
    let f = fs::File::open(&a.predictions).map_err(|e| cli_err(format!("{}: {e}", a.predictions.display())))?;
    let preds: Vec<RelativePose> = read_predictions_csv(BufReader::new(f))?.into_iter().map(|(_, p)| p).collect();
    let gts = manifest.ground_truths()?;
    if preds.len() != gts.len() {
        return Err(EvalError::LengthMismatch { predictions: preds.len(), records: gts.len() }.into());
    }
    let report = ErrorReport::new(pair_errors(&a.method, &preds, &gts)?, default_bin_edges())?;
    write_snapshot(&a.out, "eval", threads, a)?;
    write_report(&report, &a.out)
}

fn report(a: &ReportArgs, threads: usize) -> Result<(), Error> {
    let reports = a.inputs.iter().map(|p| ErrorReport::load_json(p)).collect::<Result<Vec<_>, _>>()?;
    let edges = reports.first().map(|r| r.bin_edges.clone()).unwrap_or_else(default_bin_edges);
    let combined = ErrorReport::combine(&reports, edges)?;
    write_snapshot(&a.out, "report", threads, a)?;
    write_report(&combined, &a.out)
}

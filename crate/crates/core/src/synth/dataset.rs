//! Pair manifests (JSON Lines) and the synthetic dataset builder.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::scene::{render_pair, sample_pair_pose, square_intrinsics, PairSampling, PlanarScene, Texture};
use super::{stream_rng, SynthError};
use crate::camera::CameraIntrinsics;
use crate::geom::{write_pose_text, PoseEntry, Quaternion, RelativePose};

/// One manifest line. Image paths are relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub img1: String,
    pub img2: String,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub seed: u64,
}

impl PairRecord {
    pub fn new(img1: String, img2: String, gt: &RelativePose, seed: u64) -> Self {
        let [qw, qx, qy, qz, tx, ty, tz] = gt.to_vector();
        Self { img1, img2, qw, qx, qy, qz, tx, ty, tz, seed }
    }

    /// Ground truth, renormalized.
    pub fn ground_truth(&self) -> Result<RelativePose, SynthError> {
        Ok(RelativePose::new(
            Quaternion::new(self.qw, self.qx, self.qy, self.qz),
            Vector3::new(self.tx, self.ty, self.tz),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairManifest {
    /// Directory image paths are resolved against.
    pub base: PathBuf,
    pub records: Vec<PairRecord>,
}

impl PairManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn ground_truths(&self) -> Result<Vec<RelativePose>, SynthError> {
        self.records.iter().map(PairRecord::ground_truth).collect()
    }
}

pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<PairRecord>, SynthError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord =
            serde_json::from_str(&line).map_err(|e| SynthError::Manifest { line: i + 1, msg: e.to_string() })?;
        rec.ground_truth().map_err(|e| SynthError::Manifest { line: i + 1, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(mut w: W, records: &[PairRecord]) -> Result<(), SynthError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| SynthError::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<PairManifest, SynthError> {
    let f = fs::File::open(path).map_err(|e| SynthError::io(path, e))?;
    let records = read_manifest(BufReader::new(f))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(PairManifest { base, records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Square image side in pixels.
    pub image_size: u32,
    /// Focal length as a fraction of the image side.
    pub focal_ratio: f64,
    pub plane_distance: f64,
    pub max_rotation_deg: f64,
    pub max_baseline_ratio: f64,
    /// Shared texture seed; `None` gives every pair its own texture.
    pub texture_seed: Option<u64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let s = PairSampling::default();
        Self {
            image_size: 64,
            focal_ratio: 0.8,
            plane_distance: 1.0,
            max_rotation_deg: s.max_rotation_deg,
            max_baseline_ratio: s.max_baseline_ratio,
            texture_seed: None,
        }
    }
}

impl DatasetConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        square_intrinsics(self.image_size, self.focal_ratio)
    }

    pub fn sampling(&self) -> PairSampling {
        PairSampling { max_rotation_deg: self.max_rotation_deg, max_baseline_ratio: self.max_baseline_ratio }
    }
}

/// Contents of `dataset.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub seed: u64,
    pub n_pairs: usize,
    pub split_ratio: f64,
    pub n_train: usize,
    pub config: DatasetConfig,
    pub intrinsics: CameraIntrinsics,
}

const RECORD_STREAM_BASE: u64 = 1 << 32;

/// Seed of record `index`, drawn from its own stream of the dataset seed.
pub fn record_seed(seed: u64, index: usize) -> u64 {
    stream_rng(seed, RECORD_STREAM_BASE + index as u64).next_u64()
}

/// Renders `n_pairs` pairs into `out_dir` and writes `train.jsonl`,
/// `val.jsonl`, `poses.txt` (absolute poses, camera 1 frame as world) and
/// `dataset.json`. The first `round(split_ratio * n)` pairs (clamped so both
/// splits are non-empty) form the training split.
pub fn build_dataset(
    n_pairs: usize,
    split_ratio: f64,
    config: &DatasetConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<(PairManifest, PairManifest), SynthError> {
    if n_pairs < 2 {
        return Err(SynthError::InvalidScene(format!("need at least 2 pairs, asked for {n_pairs}")));
    }
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(SynthError::InvalidScene(format!("split ratio {split_ratio} outside (0, 1)")));
    }
    let k = config.intrinsics();
    k.validate().map_err(|e| SynthError::InvalidScene(e.to_string()))?;
    let sampling = config.sampling();
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| SynthError::io(&img_dir, e))?;

    let mut records = Vec::with_capacity(n_pairs);
    let mut poses = Vec::with_capacity(2 * n_pairs);
    for i in 0..n_pairs {
        let rs = record_seed(seed, i);
        let texture = Texture::new(config.texture_seed.unwrap_or(rs));
        let scene = PlanarScene::new(-Vector3::z(), config.plane_distance, texture)?;
        let pair_poses = sample_pair_pose(rs, &sampling, &scene, &k)?;
        let pair = render_pair(&scene, &pair_poses, &k)?;
        let (n1, n2) = (format!("images/{i:06}_1.ppm"), format!("images/{i:06}_2.ppm"));
        pair.image1.save_ppm(&out_dir.join(&n1))?;
        pair.image2.save_ppm(&out_dir.join(&n2))?;
        records.push(PairRecord::new(n1, n2, &pair.ground_truth, rs));
        poses.push(PoseEntry { id: format!("{i:06}_1"), pose: pair_poses.0 });
        poses.push(PoseEntry { id: format!("{i:06}_2"), pose: pair_poses.1 });
    }

    let n_train = ((split_ratio * n_pairs as f64).round() as usize).clamp(1, n_pairs - 1);
    let val_records = records.split_off(n_train);
    for (name, recs) in [("train.jsonl", &records), ("val.jsonl", &val_records)] {
        let mut buf = Vec::new();
        write_manifest(&mut buf, recs)?;
        let p = out_dir.join(name);
        fs::write(&p, buf).map_err(|e| SynthError::io(&p, e))?;
    }
    let mut buf = Vec::new();
    write_pose_text(&mut buf, &poses)?;
    let p = out_dir.join("poses.txt");
    fs::write(&p, buf).map_err(|e| SynthError::io(&p, e))?;
    let info = DatasetInfo { seed, n_pairs, split_ratio, n_train, config: config.clone(), intrinsics: k };
    let json = serde_json::to_string_pretty(&info).map_err(|e| SynthError::Format(e.to_string()))?;
    let p = out_dir.join("dataset.json");
    fs::write(&p, json + "\n").map_err(|e| SynthError::io(&p, e))?;

    let base = out_dir.to_path_buf();
    Ok((PairManifest { base: base.clone(), records }, PairManifest { base, records: val_records }))
}

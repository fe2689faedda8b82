//! Siamese relative-pose regressor.
//!
//! Two branches with one shared set of parameters map each image to a
//! feature vector; the two vectors are concatenated and fed to two parallel
//! affine heads, `fc1` (4 raw quaternion values) and `fc2` (3 raw
//! translation values). Training minimizes
//! `||dt_hat - dt|| + beta * ||dq_hat - dq||` with Adam.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::median;
use crate::geom::{roe, rte, GeomError, Quaternion, RelativePose};
use crate::nn::{
    adam_step, read_container, write_container, AdamConfig, AdamState, ConvSpec, Graph, NamedTensor, NnError,
    PoolSpec, SppSpec, Tensor, Var,
};
use crate::synth::{load_manifest, resize_and_crop, stream_rng, CropPolicy, PairManifest, RgbImage, SynthError};

#[derive(Debug, Error)]
pub enum RegressorError {
    #[error("invalid model config: {0}")]
    ConfigInvalid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("weights do not match the model: {0}")]
    ShapeMismatchOnLoad(String),
    #[error("weight container corrupt: {0}")]
    ContainerCorrupt(String),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error("empty training or validation set")]
    EmptyDataset,
    #[error(transparent)]
    Nn(NnError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl From<NnError> for RegressorError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::ShapeMismatch(m) => RegressorError::ShapeMismatch(m),
            NnError::ContainerCorrupt(m) => RegressorError::ContainerCorrupt(m),
            other => RegressorError::Nn(other),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> RegressorError {
    RegressorError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "cnnA")]
    CnnA,
    #[serde(rename = "cnnB")]
    CnnB,
    #[serde(rename = "cnnAspp")]
    CnnASpp,
    #[serde(rename = "cnnBspp")]
    CnnBSpp,
    #[serde(rename = "tiny")]
    Tiny,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::CnnA, Preset::CnnB, Preset::CnnASpp, Preset::CnnBSpp, Preset::Tiny];

    pub fn name(self) -> &'static str {
        match self {
            Preset::CnnA => "cnnA",
            Preset::CnnB => "cnnB",
            Preset::CnnASpp => "cnnAspp",
            Preset::CnnBSpp => "cnnBspp",
            Preset::Tiny => "tiny",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = RegressorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| RegressorError::ConfigInvalid(format!("unknown preset {s:?}")))
    }
}

/// One branch layer. Every convolution is followed by a ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchLayer {
    Conv(ConvSpec),
    Pool(PoolSpec),
}

/// Image preparation: shorter side resized to `resize_short`, then a square
/// crop (random for training, centered for inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputPolicy {
    pub resize_short: usize,
    pub train_crop: usize,
    pub test_crop: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: Preset,
    pub in_channels: usize,
    pub layers: Vec<BranchLayer>,
    pub spp: Option<SppSpec>,
    /// Input extent at which the configuration is validated and the head
    /// width fixed. Without SPP it is the only accepted input size.
    pub input_size: usize,
    pub input: InputPolicy,
    pub beta: f64,
}

fn conv(n: usize, k: usize, s: usize, p: usize) -> BranchLayer {
    BranchLayer::Conv(ConvSpec { filters: n, kernel: k, stride: s, pad: p })
}

fn pool(k: usize, s: usize) -> BranchLayer {
    BranchLayer::Pool(PoolSpec { kernel: k, stride: s })
}

pub const DEFAULT_BETA: f64 = 10.0;

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        let alexnet_b = vec![
            conv(96, 11, 4, 0),
            pool(3, 2),
            conv(256, 5, 1, 2),
            pool(3, 2),
            conv(384, 3, 1, 1),
            conv(384, 3, 1, 1),
            conv(256, 3, 1, 1),
        ];
        let mut alexnet_a = alexnet_b.clone();
        alexnet_a.push(pool(3, 2));
        let levels = |l: &[usize]| Some(SppSpec::new(l.to_vec()).expect("valid levels"));
        let fixed = InputPolicy { resize_short: 323, train_crop: 227, test_crop: 227 };
        let variable = InputPolicy { resize_short: 323, train_crop: 323, test_crop: 227 };
        let (layers, spp, input_size, input) = match preset {
            Preset::CnnA => (alexnet_a, None, 227, fixed),
            Preset::CnnB => (alexnet_b, None, 227, fixed),
            Preset::CnnASpp => (alexnet_a, levels(&[1, 2, 3, 6]), 227, variable),
            Preset::CnnBSpp => (alexnet_b, levels(&[1, 2, 3, 6, 13]), 227, variable),
            Preset::Tiny => (
                vec![conv(16, 5, 2, 0), pool(3, 2), conv(32, 3, 1, 1)],
                levels(&[1, 2, 4]),
                64,
                InputPolicy { resize_short: 64, train_crop: 64, test_crop: 64 },
            ),
        };
        Self { preset, in_channels: 3, layers, spp, input_size, input, beta: DEFAULT_BETA }
    }

    /// Final branch feature map `(channels, height, width)` for a square
    /// input of extent `size`, or `None` when some layer does not fit.
    pub fn feature_map(&self, size: usize) -> Option<(usize, usize, usize)> {
        self.feature_map_hw(size, size)
    }

    fn feature_map_hw(&self, h: usize, w: usize) -> Option<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = (self.in_channels, h, w);
        for layer in &self.layers {
            match layer {
                BranchLayer::Conv(s) => {
                    c = s.filters;
                    h = s.output_extent(h)?;
                    w = s.output_extent(w)?;
                }
                BranchLayer::Pool(s) => {
                    h = s.output_extent(h)?;
                    w = s.output_extent(w)?;
                }
            }
        }
        Some((c, h, w))
    }

    /// Length of one branch's output vector at the declared input size.
    pub fn branch_output_len(&self) -> usize {
        let (c, h, w) = self.feature_map(self.input_size).unwrap_or((0, 0, 0));
        match &self.spp {
            Some(spp) => c * spp.bins_per_channel(),
            None => c * h * w,
        }
    }

    /// Input width of both heads: two concatenated branch outputs.
    pub fn head_input_len(&self) -> usize {
        2 * self.branch_output_len()
    }

    /// Smallest square input accepted.
    pub fn min_input_size(&self) -> usize {
        match &self.spp {
            None => self.input_size,
            Some(spp) => (1..=self.input_size.max(1) * 4)
                .find(|&a| self.feature_map(a).is_some_and(|(_, h, _)| h >= spp.max_level()))
                .unwrap_or(usize::MAX),
        }
    }

    pub fn validate(&self) -> Result<(), RegressorError> {
        let bad = |m: String| Err(RegressorError::ConfigInvalid(m));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.in_channels == 0 || self.layers.is_empty() {
            return bad("branch needs input channels and at least one layer".into());
        }
        if !matches!(self.layers[0], BranchLayer::Conv(_)) {
            return bad("branch must start with a convolution".into());
        }
        for l in &self.layers {
            let ok = match l {
                BranchLayer::Conv(s) => ConvSpec::new(s.filters, s.kernel, s.stride, s.pad).is_ok(),
                BranchLayer::Pool(s) => PoolSpec::new(s.kernel, s.stride).is_ok(),
            };
            if !ok {
                return bad(format!("invalid layer {l:?}"));
            }
        }
        let Some((_, h, w)) = self.feature_map(self.input_size) else {
            return bad(format!("layers do not fit a {0}x{0} input", self.input_size));
        };
        if let Some(spp) = &self.spp {
            if h.min(w) < spp.max_level() {
                return bad(format!(
                    "spp level {} exceeds the {h}x{w} feature map at input {}",
                    spp.max_level(),
                    self.input_size
                ));
            }
        }
        let p = &self.input;
        let crops_ok = if self.spp.is_some() {
            p.train_crop >= self.min_input_size() && p.test_crop >= self.min_input_size()
        } else {
            p.train_crop == self.input_size && p.test_crop == self.input_size
        };
        if !crops_ok || p.resize_short < p.train_crop.max(p.test_crop) {
            return bad(format!("input policy {p:?} incompatible with the network"));
        }
        Ok(())
    }

    /// Parameter names and shapes in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c = self.in_channels;
        let mut i = 0;
        for layer in &self.layers {
            if let BranchLayer::Conv(s) = layer {
                i += 1;
                out.push((format!("branch.conv{i}.weight"), vec![s.filters, c, s.kernel, s.kernel]));
                out.push((format!("branch.conv{i}.bias"), vec![s.filters]));
                c = s.filters;
            }
        }
        let d = self.head_input_len();
        out.push(("head.fc1.weight".into(), vec![4, d]));
        out.push(("head.fc1.bias".into(), vec![4]));
        out.push(("head.fc2.weight".into(), vec![3, d]));
        out.push(("head.fc2.bias".into(), vec![3]));
        out
    }
}

/// Name of the metadata tensor recording the pyramid levels (coarse to
/// fine) in weight files of SPP models.
pub const SPP_META: &str = "meta/spp_levels";

/// Shared-weight Siamese network. Each parameter tensor exists exactly
/// once; both branches read it.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    optimizer: Option<AdamState>,
}

pub fn build_model(config: &ModelConfig, seed: u64) -> Result<SiameseModel, RegressorError> {
    config.validate()?;
    let mut names = Vec::new();
    let mut params = Vec::new();
    for (idx, (name, shape)) in config.parameter_shapes().into_iter().enumerate() {
        let n: usize = shape.iter().product();
        let data = if name.ends_with(".bias") {
            vec![0.0; n]
        } else {
            let fan_in: usize = shape[1..].iter().product();
            // He-uniform for ReLU convolutions, LeCun-uniform for the heads
            let bound = if name.starts_with("branch.") {
                (6.0 / fan_in as f64).sqrt()
            } else {
                1.0 / (fan_in as f64).sqrt()
            };
            let mut rng = stream_rng(seed, idx as u64);
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        names.push(name);
        params.push(Tensor::new(shape, data)?);
    }
    Ok(SiameseModel { config: config.clone(), names, params, optimizer: None })
}

impl SiameseModel {
    /// Model with explicit parameter values, in [`ModelConfig::parameter_shapes`] order.
    pub fn from_parameters(config: &ModelConfig, params: Vec<Tensor>) -> Result<Self, RegressorError> {
        config.validate()?;
        let shapes = config.parameter_shapes();
        if shapes.len() != params.len() {
            return Err(RegressorError::ShapeMismatchOnLoad(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(RegressorError::ShapeMismatchOnLoad(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        let names = shapes.into_iter().map(|(n, _)| n).collect();
        Ok(Self { config: config.clone(), names, params, optimizer: None })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    fn leaves<'a>(&'a self, g: &mut Graph<'a>) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p)).collect()
    }

    fn check_input(&self, img: &Tensor) -> Result<(), RegressorError> {
        let s = img.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != self.config.in_channels {
            return Err(RegressorError::ShapeMismatch(format!(
                "expected a [1, {}, H, W] image, got {s:?}",
                self.config.in_channels
            )));
        }
        let fits = match &self.config.spp {
            None => s[2] == self.config.input_size && s[3] == self.config.input_size,
            Some(spp) => self
                .config
                .feature_map_hw(s[2], s[3])
                .is_some_and(|(_, h, w)| h.min(w) >= spp.max_level()),
        };
        if !fits {
            return Err(RegressorError::ShapeMismatch(format!(
                "{}x{} input not accepted by {} (minimum {})",
                s[2],
                s[3],
                self.config.preset,
                self.config.min_input_size()
            )));
        }
        Ok(())
    }

    /// One branch applied to `img`; returns a `[1, features]` node.
    fn branch(&self, g: &mut Graph<'_>, leaves: &[Var], img: Var) -> Result<Var, RegressorError> {
        let mut x = img;
        let mut k = 0;
        for layer in &self.config.layers {
            x = match layer {
                BranchLayer::Conv(s) => {
                    let y = g.conv2d(x, leaves[2 * k], leaves[2 * k + 1], *s)?;
                    k += 1;
                    g.relu(y)
                }
                BranchLayer::Pool(s) => g.maxpool2d(x, *s)?,
            };
        }
        if let Some(spp) = &self.config.spp {
            x = g.spp(x, spp)?;
        }
        Ok(x)
    }

    /// Builds both branches and the heads; returns `(dq_raw, dt_raw)` nodes.
    fn heads<'a>(
        &'a self,
        g: &mut Graph<'a>,
        leaves: &[Var],
        img1: Tensor,
        img2: Tensor,
    ) -> Result<(Var, Var), RegressorError> {
        self.check_input(&img1)?;
        self.check_input(&img2)?;
        let a = g.input(img1);
        let b = g.input(img2);
        let fa = self.branch(g, leaves, a)?;
        let fb = self.branch(g, leaves, b)?;
        let joint = g.concat(&[fa, fb])?;
        let n = leaves.len();
        let dq = g.linear(joint, leaves[n - 4], leaves[n - 3])?;
        let dt = g.linear(joint, leaves[n - 2], leaves[n - 1])?;
        Ok((dq, dt))
    }

    /// Raw 7-vector `[dq (4), dt (3)]` without normalization.
    pub fn forward_pair(&self, img1: &Tensor, img2: &Tensor) -> Result<[f64; 7], RegressorError> {
        let mut g = Graph::new();
        let leaves = self.leaves(&mut g);
        let (dq, dt) = self.heads(&mut g, &leaves, img1.clone(), img2.clone())?;
        let mut out = [0.0; 7];
        out[..4].copy_from_slice(g.value(dq).data());
        out[4..].copy_from_slice(g.value(dt).data());
        Ok(out)
    }

    /// Normalized relative pose prediction.
    pub fn predict(&self, img1: &Tensor, img2: &Tensor) -> Result<RelativePose, RegressorError> {
        normalize_prediction(&self.forward_pair(img1, img2)?)
    }

    /// Pair loss and its gradient with respect to every parameter.
    pub fn loss_and_gradients(
        &self,
        img1: &Tensor,
        img2: &Tensor,
        gt: &RelativePose,
        beta: f64,
    ) -> Result<(f64, Vec<Tensor>), RegressorError> {
        let mut g = Graph::new();
        let leaves = self.leaves(&mut g);
        let (dq, dt) = self.heads(&mut g, &leaves, img1.clone(), img2.clone())?;
        let v = gt.to_vector();
        let q_target = g.input(Tensor::from_slice(&[1, 4], &v[..4])?);
        let t_target = g.input(Tensor::from_slice(&[1, 3], &v[4..])?);
        let lq = g.euclidean_loss(dq, q_target)?;
        let lt = g.euclidean_loss(dt, t_target)?;
        let lq = g.scale(lq, beta);
        let loss = g.add(lt, lq)?;
        let value = g.value(loss).data()[0];
        let mut grads = g.backward(loss)?;
        let out = leaves.iter().zip(&self.params).map(|(&v, p)| grads.take_or_zeros(v, p)).collect();
        Ok((value, out))
    }
}

/// `||dt_hat - dt|| + beta * ||dq_hat - dq||` for a raw prediction.
pub fn pose_loss(pred: &[f64; 7], gt: &RelativePose, beta: f64) -> f64 {
    let v = gt.to_vector();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    dist(&pred[4..], &v[4..]) + beta * dist(&pred[..4], &v[..4])
}

/// Splits a raw output into unit quaternion (canonical sign) and unit
/// translation direction.
pub fn normalize_prediction(raw: &[f64; 7]) -> Result<RelativePose, RegressorError> {
    Ok(RelativePose::new(
        Quaternion::new(raw[0], raw[1], raw[2], raw[3]),
        Vector3::new(raw[4], raw[5], raw[6]),
    )?)
}

pub fn save_weights(model: &SiameseModel, path: &Path) -> Result<(), RegressorError> {
    let mut tensors: Vec<NamedTensor> =
        model.names.iter().cloned().zip(model.params.iter().cloned()).collect();
    if let Some(spp) = &model.config.spp {
        let levels: Vec<f64> = spp.levels().iter().map(|&l| l as f64).collect();
        tensors.push((SPP_META.into(), Tensor::from_slice(&[levels.len()], &levels)?));
    }
    let mut buf = Vec::new();
    write_container(&mut buf, &tensors)?;
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Reads a weight file written for `config`. Tensors are matched by name;
/// a missing, extra or differently shaped tensor is a mismatch.
pub fn load_weights(path: &Path, config: &ModelConfig) -> Result<SiameseModel, RegressorError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut tensors = read_container(bytes.as_slice())?;
    let meta = tensors.iter().position(|(n, _)| n == SPP_META).map(|i| tensors.remove(i));
    let expected: Option<Vec<f64>> = config.spp.as_ref().map(|s| s.levels().iter().map(|&l| l as f64).collect());
    let found = meta.map(|(_, t)| t.into_data());
    if found != expected {
        return Err(RegressorError::ShapeMismatchOnLoad(format!(
            "pyramid levels in file {found:?}, model expects {expected:?}"
        )));
    }
    let shapes = config.parameter_shapes();
    if tensors.len() != shapes.len() {
        return Err(RegressorError::ShapeMismatchOnLoad(format!(
            "file has {} parameter tensors, {} expects {}",
            tensors.len(),
            config.preset,
            shapes.len()
        )));
    }
    let mut params = Vec::with_capacity(shapes.len());
    for (name, _) in &shapes {
        let (_, t) = tensors
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| RegressorError::ShapeMismatchOnLoad(format!("missing tensor {name}")))?;
        params.push(t.clone());
    }
    SiameseModel::from_parameters(config, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 1e-5, batch_size: 128, epochs: 10, seed: 0, beta: DEFAULT_BETA }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_median_roe_deg: f64,
    pub val_median_rte_deg: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,train_loss,val_median_roe_deg,val_median_rte_deg";

pub fn write_train_log<W: std::io::Write>(mut w: W, log: &[EpochLog]) -> std::io::Result<()> {
    writeln!(w, "{TRAIN_LOG_HEADER}")?;
    for e in log {
        writeln!(w, "{},{},{},{}", e.epoch, e.train_loss, e.val_median_roe_deg, e.val_median_rte_deg)?;
    }
    Ok(())
}

/// A decoded image pair with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub img1: RgbImage,
    pub img2: RgbImage,
    pub gt: RelativePose,
}

/// Loads every pair of a manifest. Ground truth is renormalized on load.
pub fn load_samples(manifest: &PairManifest) -> Result<Vec<PairSample>, RegressorError> {
    manifest
        .records
        .iter()
        .map(|r| {
            Ok(PairSample {
                img1: RgbImage::load_ppm(&manifest.resolve(&r.img1))?,
                img2: RgbImage::load_ppm(&manifest.resolve(&r.img2))?,
                gt: r.ground_truth()?,
            })
        })
        .collect()
}

pub fn load_samples_from(path: &Path) -> Result<Vec<PairSample>, RegressorError> {
    load_samples(&load_manifest(path)?)
}

/// Network inputs for a pair. Both images share the crop offset.
pub fn prepare_pair(
    img1: &RgbImage,
    img2: &RgbImage,
    policy: &CropPolicy,
) -> Result<(Tensor, Tensor), RegressorError> {
    Ok((resize_and_crop(img1, policy)?.to_tensor(), resize_and_crop(img2, policy)?.to_tensor()))
}

fn test_policy(config: &ModelConfig) -> CropPolicy {
    CropPolicy::center(config.input.resize_short, config.input.test_crop)
}

/// Predicts every pair with the inference crop policy.
pub fn predict_samples(model: &SiameseModel, samples: &[PairSample]) -> Result<Vec<RelativePose>, RegressorError> {
    let policy = test_policy(model.config());
    samples
        .iter()
        .map(|s| {
            let (a, b) = prepare_pair(&s.img1, &s.img2, &policy)?;
            model.predict(&a, &b)
        })
        .collect()
}

/// Median ROE and RTE of `model` on `samples`.
pub fn median_errors(model: &SiameseModel, samples: &[PairSample]) -> Result<(f64, f64), RegressorError> {
    let preds = predict_samples(model, samples)?;
    let mut roes = Vec::with_capacity(preds.len());
    let mut rtes = Vec::with_capacity(preds.len());
    for (p, s) in preds.iter().zip(samples) {
        roes.push(roe(&p.dq, &s.gt.dq)?);
        rtes.push(rte(&p.dt, &s.gt.dt)?);
    }
    Ok((median(&roes).unwrap_or(f64::NAN), median(&rtes).unwrap_or(f64::NAN)))
}

const SHUFFLE_STREAM: u64 = 1 << 40;
const CROP_STREAM: u64 = 1 << 41;

/// Mini-batch Adam on the pair loss. Examples of a batch are processed in
/// order and their gradients summed before averaging, so results depend
/// only on the seed. `progress` sees each epoch's log line as it completes.
pub fn train(
    model: &mut SiameseModel,
    train_set: &[PairSample],
    val_set: &[PairSample],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>, RegressorError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(RegressorError::EmptyDataset);
    }
    if cfg.batch_size == 0 || !(cfg.beta > 0.0) || !(cfg.lr >= 0.0) || !(cfg.weight_decay >= 0.0) {
        return Err(RegressorError::ConfigInvalid(format!("invalid training config {cfg:?}")));
    }
    let adam = AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() };
    let mut state = model.optimizer.take().unwrap_or_else(|| AdamState::new(&model.params));
    let input = model.config.input;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut losses = vec![0.0; train_set.len()];
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let mut sum: Vec<Tensor> = model.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            for &i in batch {
                let s = &train_set[i];
                let stream = CROP_STREAM + ((epoch as u64) << 24) + i as u64;
                let crop_seed = stream_rng(cfg.seed, stream).random();
                let policy = CropPolicy::random(input.resize_short, input.train_crop, crop_seed);
                let (a, b) = prepare_pair(&s.img1, &s.img2, &policy)?;
                let (loss, grads) = model.loss_and_gradients(&a, &b, &s.gt, cfg.beta)?;
                if !loss.is_finite() {
                    return Err(RegressorError::NonFiniteLoss { epoch, step, loss });
                }
                losses[i] = loss;
                for (acc, g) in sum.iter_mut().zip(&grads) {
                    acc.add_assign(g);
                }
            }
            for g in &mut sum {
                g.scale_inplace(1.0 / batch.len() as f64);
            }
            adam_step(&mut model.params, &sum, &mut state, &adam)?;
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let (val_median_roe_deg, val_median_rte_deg) = median_errors(model, val_set)?;
        let line = EpochLog { epoch, train_loss, val_median_roe_deg, val_median_rte_deg };
        progress(&line);
        log.push(line);
    }
    model.optimizer = Some(state);
    Ok(log)
}

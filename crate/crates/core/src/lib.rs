//! Relative camera pose estimation toolkit.
//!
//! * [`geom`]: quaternions, rotations, relative pose and the ROE/RTE metrics
//! * [`camera`]: pinhole projection, frusta and overlapping view pairs
//! * [`nn`]: small reverse-mode autodiff engine (conv, pool, SPP, affine)
//! * [`regressor`]: Siamese CNN pose regressor, training and inference
//! * [`epipolar`]: essential matrix + RANSAC baseline with cheirality
//! * [`synth`]: deterministic synthetic scenes, image pairs and manifests
//! * [`eval`]: per-pair errors, cumulative histograms, medians and plots
//! * [`cli`]: the `relpose` command line

pub mod camera;
pub mod geom;
pub mod nn;
pub mod epipolar;
pub mod synth;
pub mod regressor;
pub mod eval;
pub mod cli;

use thiserror::Error;

/// Any error of the crate, prefixed with the module it came from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geom: {0}")]
    Geom(#[from] geom::GeomError),
    #[error("camera: {0}")]
    Camera(#[from] camera::CameraError),
    #[error("nn: {0}")]
    Nn(#[from] nn::NnError),
    #[error("epipolar: {0}")]
    Epipolar(#[from] epipolar::EpipolarError),
    #[error("synth: {0}")]
    Synth(#[from] synth::SynthError),
    #[error("regressor: {0}")]
    Regressor(#[from] regressor::RegressorError),
    #[error("eval: {0}")]
    Eval(#[from] eval::EvalError),
    #[error("cli: {0}")]
    Cli(String),
}

//! Deterministic synthetic data: textured planar scenes rendered from two
//! cameras, point correspondences, and on-disk pair manifests.
//!
//! All randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64(seed)`; independent consumers use distinct ChaCha stream
//! ids (see [`stream_rng`]), so every draw is a pure function of
//! `(seed, stream, position)`.

mod correspond;
mod dataset;
mod image;
mod scene;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::GeomError;

pub use correspond::{make_box_correspondences, make_correspondences, sample_box_pose, BoxScene, MatchNoise};
pub use dataset::{
    build_dataset, load_manifest, read_manifest, record_seed, write_manifest, DatasetConfig, DatasetInfo,
    PairManifest, PairRecord,
};
pub use image::{resize_and_crop, resized_dims, CropMode, CropPolicy, RgbImage};
pub use scene::{
    intrinsic_matrix, inverse_intrinsic_matrix, render_pair, render_view, sample_pair_pose, square_intrinsics,
    PairSampling, PlanarScene, RenderedPair, Texture, MAX_POSE_ATTEMPTS,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("plane is behind a camera or does not fill its view")]
    PlaneBehindCamera,
    #[error("pose sampling exhausted after {0} attempts")]
    SamplingExhausted(usize),
    #[error("image {width}x{height} too small for a {required} pixel crop")]
    ImageTooSmall { width: usize, height: usize, required: usize },
    #[error("format: {0}")]
    Format(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl SynthError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SynthError::File { path: path.to_path_buf(), source }
    }
}

/// ChaCha8 generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

//! Synthetic pixel correspondences with ground-truth inlier masks.

use nalgebra::{Vector2, Vector3};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use super::scene::PlanarScene;
use super::{stream_rng, SynthError};
use crate::camera::{project, CameraIntrinsics};
use crate::epipolar::{CorrespondenceSet, PixelMatch};
use crate::geom::{AbsolutePose, Quaternion, Rotation3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchNoise {
    /// Standard deviation of the Gaussian pixel noise added to every inlier
    /// coordinate.
    pub noise_px: f64,
    /// Fraction of matches replaced by uniform random pixel pairs.
    pub outlier_ratio: f64,
}

impl MatchNoise {
    pub const NONE: MatchNoise = MatchNoise { noise_px: 0.0, outlier_ratio: 0.0 };
}

const MAX_DRAWS_PER_MATCH: usize = 1000;

fn in_image(k: &CameraIntrinsics, p: &Vector2<f64>) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x <= k.width as f64 && p.y <= k.height as f64
}

fn finish(
    mut clean: Vec<PixelMatch>,
    k: &CameraIntrinsics,
    noise: &MatchNoise,
    rng: &mut ChaCha8Rng,
) -> Result<CorrespondenceSet, SynthError> {
    if !(0.0..=1.0).contains(&noise.outlier_ratio) || !(noise.noise_px >= 0.0) {
        return Err(SynthError::InvalidScene(format!("invalid noise model {noise:?}")));
    }
    let count = clean.len();
    if noise.noise_px > 0.0 {
        let normal = Normal::new(0.0, noise.noise_px).expect("finite sigma");
        for m in &mut clean {
            m.u1 += normal.sample(rng);
            m.v1 += normal.sample(rng);
            m.u2 += normal.sample(rng);
            m.v2 += normal.sample(rng);
        }
    }
    let n_out = (noise.outlier_ratio * count as f64).round() as usize;
    let mut mask = vec![true; count];
    let mut picked: Vec<usize> = index::sample(rng, count, n_out).into_vec();
    picked.sort_unstable();
    let (w, h) = (k.width as f64, k.height as f64);
    for i in picked {
        mask[i] = false;
        clean[i] = PixelMatch {
            u1: rng.random_range(0.0..w),
            v1: rng.random_range(0.0..h),
            u2: rng.random_range(0.0..w),
            v2: rng.random_range(0.0..h),
        };
    }
    let mut set = CorrespondenceSet::new(clean, *k, *k);
    set.inlier_mask = Some(mask);
    Ok(set)
}

/// Random plane points seen by both cameras. Camera 1 is the identity pose
/// of the scene frame.
pub fn make_correspondences(
    scene: &PlanarScene,
    pose2: &AbsolutePose,
    k: &CameraIntrinsics,
    count: usize,
    noise: &MatchNoise,
    seed: u64,
) -> Result<CorrespondenceSet, SynthError> {
    if count < 8 {
        return Err(SynthError::InvalidScene(format!("need at least 8 correspondences, asked for {count}")));
    }
    let pose1 = AbsolutePose::identity();
    if !scene.fills_view(k, &pose1) {
        return Err(SynthError::PlaneBehindCamera);
    }
    let mut rng = stream_rng(seed, 2);
    let mut clean = Vec::with_capacity(count);
    let mut draws = 0;
    while clean.len() < count {
        draws += 1;
        if draws > count * MAX_DRAWS_PER_MATCH {
            return Err(SynthError::SamplingExhausted(draws));
        }
        let uv = Vector2::new(rng.random_range(0.0..k.width as f64), rng.random_range(0.0..k.height as f64));
        let Some(x) = scene.point_from_cam1_pixel(k, &uv) else { continue };
        let p2 = project(k, pose2, &x);
        if p2.behind_camera() {
            return Err(SynthError::PlaneBehindCamera);
        }
        if in_image(k, &p2.pixel) {
            clean.push(PixelMatch { u1: uv.x, v1: uv.y, u2: p2.pixel.x, v2: p2.pixel.y });
        }
    }
    finish(clean, k, noise, &mut rng)
}

/// Axis-aligned box of scene points in the first camera's frame. Points
/// spread in depth, which avoids the planar degeneracy of the 8-point
/// solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxScene {
    pub center: Vector3<f64>,
    pub half_extent: Vector3<f64>,
}

impl Default for BoxScene {
    fn default() -> Self {
        Self { center: Vector3::new(0.0, 0.0, 6.0), half_extent: Vector3::new(2.0, 2.0, 2.0) }
    }
}

pub fn make_box_correspondences(
    scene: &BoxScene,
    pose2: &AbsolutePose,
    k: &CameraIntrinsics,
    count: usize,
    noise: &MatchNoise,
    seed: u64,
) -> Result<(CorrespondenceSet, Vec<Vector3<f64>>), SynthError> {
    if count < 8 {
        return Err(SynthError::InvalidScene(format!("need at least 8 correspondences, asked for {count}")));
    }
    let pose1 = AbsolutePose::identity();
    let mut rng = stream_rng(seed, 2);
    let mut clean = Vec::with_capacity(count);
    let mut points = Vec::with_capacity(count);
    let mut draws = 0;
    while clean.len() < count {
        draws += 1;
        if draws > count * MAX_DRAWS_PER_MATCH {
            return Err(SynthError::SamplingExhausted(draws));
        }
        let x = scene.center
            + Vector3::new(
                rng.random_range(-1.0..=1.0) * scene.half_extent.x,
                rng.random_range(-1.0..=1.0) * scene.half_extent.y,
                rng.random_range(-1.0..=1.0) * scene.half_extent.z,
            );
        let p1 = project(k, &pose1, &x);
        let p2 = project(k, pose2, &x);
        if p1.depth > 0.0 && p2.depth > 0.0 && in_image(k, &p1.pixel) && in_image(k, &p2.pixel) {
            clean.push(PixelMatch { u1: p1.pixel.x, v1: p1.pixel.y, u2: p2.pixel.x, v2: p2.pixel.y });
            points.push(x);
        }
    }
    Ok((finish(clean, k, noise, &mut rng)?, points))
}

/// Random second camera for a [`BoxScene`]: center within `max_baseline`
/// of the origin (at least a fifth of it), rotated by at most
/// `max_rotation_deg` and then re-aimed so the box center stays in view.
pub fn sample_box_pose(seed: u64, scene: &BoxScene, max_rotation_deg: f64, max_baseline: f64) -> AbsolutePose {
    let mut rng = stream_rng(seed, 3);
    let dir: [f64; 3] = UnitSphere.sample(&mut rng);
    let center = Vector3::from(dir) * rng.random_range(0.2..=1.0) * max_baseline;
    let axis: [f64; 3] = UnitSphere.sample(&mut rng);
    let angle = rng.random_range(0.0..=max_rotation_deg).to_radians();
    let spin = Quaternion::from_axis_angle(&Vector3::from(axis), angle);
    // look-at rotation towards the box, perturbed by `spin`
    let forward = (scene.center - center).normalize();
    let up = if forward.y.abs() < 0.9 { Vector3::y() } else { Vector3::x() };
    let right = up.cross(&forward).normalize();
    let down = forward.cross(&right);
    let look = nalgebra::Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let r = Rotation3::from_quaternion(&spin).expect("unit").matrix() * look;
    let rotation = Rotation3::from_matrix(r).expect("product of rotations");
    AbsolutePose::new(rotation, -(rotation.apply(&center)))
}

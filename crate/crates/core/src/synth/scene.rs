//! Textured planar scenes, camera pair sampling and homography rendering.
//!
//! The plane lives in the first camera's frame and is described by a unit
//! normal `n` pointing towards that camera and a distance `d > 0`, so plane
//! points satisfy `n . X + d = 0`. Then every plane point maps into the
//! second camera through `H = K (R - t n^T / d) K^-1`.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};

use super::image::RgbImage;
use super::{stream_rng, SynthError};
use crate::camera::CameraIntrinsics;
use crate::geom::{relative_pose, AbsolutePose, Quaternion, RelativePose, Rotation3};

/// Procedural RGB texture: tiling multi-octave value noise plus a grid of
/// colored lines (red along one plane axis, green along the other).
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub seed: u64,
    /// Lattice cells per scene unit of the coarsest noise octave.
    pub base_frequency: f64,
    pub octaves: u32,
    /// Noise repeats every `period` lattice cells of the coarsest octave.
    pub period: i64,
    /// Grid line spacing in scene units; `0` disables the grid.
    pub grid_spacing: f64,
    pub grid_width: f64,
}

impl Texture {
    pub fn new(seed: u64) -> Self {
        Self { seed, base_frequency: 4.0, octaves: 3, period: 64, grid_spacing: 0.25, grid_width: 0.08 }
    }

    fn lattice(&self, ix: i64, iy: i64, octave: u32, channel: u32, period: i64) -> f64 {
        let (ix, iy) = (ix.rem_euclid(period), iy.rem_euclid(period));
        let mut h = self.seed
            ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
            ^ ((octave as u64) << 48)
            ^ ((channel as u64) << 56);
        // splitmix64 finalizer
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn noise(&self, s: f64, t: f64, channel: u32) -> f64 {
        let mut total = 0.0;
        let mut weight_sum = 0.0;
        for o in 0..self.octaves {
            let f = self.base_frequency * (1u64 << o) as f64;
            let period = self.period << o;
            let (x, y) = (s * f, t * f);
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let (ix, iy) = (x0 as i64, y0 as i64);
            let v00 = self.lattice(ix, iy, o, channel, period);
            let v10 = self.lattice(ix + 1, iy, o, channel, period);
            let v01 = self.lattice(ix, iy + 1, o, channel, period);
            let v11 = self.lattice(ix + 1, iy + 1, o, channel, period);
            let top = v00 * (1.0 - fx) + v10 * fx;
            let bot = v01 * (1.0 - fx) + v11 * fx;
            let w = 0.5f64.powi(o as i32);
            total += w * (top * (1.0 - fy) + bot * fy);
            weight_sum += w;
        }
        total / weight_sum
    }

    /// Color at plane coordinates `(s, t)`, channels in `[0, 1]`.
    pub fn sample(&self, s: f64, t: f64) -> [f64; 3] {
        let mut rgb = [self.noise(s, t, 0), self.noise(s, t, 1), self.noise(s, t, 2)];
        if self.grid_spacing > 0.0 {
            let dist = |v: f64| {
                let r = (v / self.grid_spacing).rem_euclid(1.0);
                r.min(1.0 - r) * self.grid_spacing
            };
            if dist(s) < self.grid_width * 0.5 {
                rgb = [1.0, 0.1, 0.1];
            }
            if dist(t) < self.grid_width * 0.5 {
                rgb = [0.1, 1.0, 0.1];
            }
        }
        rgb
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarScene {
    /// Unit normal pointing towards camera 1.
    pub normal: Vector3<f64>,
    pub distance: f64,
    pub texture: Texture,
}

impl PlanarScene {
    pub fn new(normal: Vector3<f64>, distance: f64, texture: Texture) -> Result<Self, SynthError> {
        let n = normal.norm();
        if !(distance > 0.0) || !(n > 1e-12) {
            return Err(SynthError::InvalidScene(format!("normal norm {n}, distance {distance}")));
        }
        Ok(Self { normal: normal / n, distance, texture })
    }

    /// Fronto-parallel plane `z = distance` in front of camera 1.
    pub fn fronto_parallel(distance: f64, texture: Texture) -> Self {
        Self::new(-Vector3::z(), distance, texture).expect("valid plane")
    }

    /// In-plane orthonormal axes used for texture coordinates.
    fn axes(&self) -> (Vector3<f64>, Vector3<f64>) {
        let helper = if self.normal.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = (helper - self.normal * self.normal.dot(&helper)).normalize();
        let e2 = self.normal.cross(&e1);
        (e1, e2)
    }

    /// Texture color at a point on the plane (camera-1 frame).
    pub fn color_at(&self, p: &Vector3<f64>) -> [f64; 3] {
        let (e1, e2) = self.axes();
        self.texture.sample(p.dot(&e1), p.dot(&e2))
    }

    /// Intersection of the camera-1 ray through pixel `uv` with the plane.
    pub fn point_from_cam1_pixel(&self, k: &CameraIntrinsics, uv: &Vector2<f64>) -> Option<Vector3<f64>> {
        let ray = k.back_project(uv, 1.0);
        let denom = self.normal.dot(&ray);
        let lambda = -self.distance / denom;
        (denom != 0.0 && lambda > 0.0 && lambda.is_finite()).then(|| ray * lambda)
    }

    /// Plane-induced homography from camera-1 pixels to camera-2 pixels.
    pub fn homography(&self, k: &CameraIntrinsics, pose2: &AbsolutePose) -> Matrix3<f64> {
        let km = intrinsic_matrix(k);
        let kinv = inverse_intrinsic_matrix(k);
        let inner = pose2.rotation.matrix() - pose2.translation * self.normal.transpose() / self.distance;
        km * inner * kinv
    }

    /// True when the plane covers the whole image of a camera placed at
    /// `pose` (camera-1 frame as world): the camera is on the plane's front
    /// side and every image corner ray hits the plane in front of it.
    pub fn fills_view(&self, k: &CameraIntrinsics, pose: &AbsolutePose) -> bool {
        let c = pose.center();
        if self.normal.dot(&c) + self.distance <= 0.0 {
            return false;
        }
        let rt = pose.rotation.matrix().transpose();
        let (w, h) = (k.width as f64, k.height as f64);
        [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)].iter().all(|&(u, v)| {
            let dir = rt * k.back_project(&Vector2::new(u, v), 1.0);
            let denom = self.normal.dot(&dir);
            denom < 0.0 && (-(self.distance + self.normal.dot(&c)) / denom).is_finite()
        })
    }
}

pub fn intrinsic_matrix(k: &CameraIntrinsics) -> Matrix3<f64> {
    Matrix3::new(k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0)
}

pub fn inverse_intrinsic_matrix(k: &CameraIntrinsics) -> Matrix3<f64> {
    Matrix3::new(1.0 / k.fx, 0.0, -k.cx / k.fx, 0.0, 1.0 / k.fy, -k.cy / k.fy, 0.0, 0.0, 1.0)
}

/// Limits for the second camera of a generated pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSampling {
    pub max_rotation_deg: f64,
    /// Baseline limit as a fraction of the plane distance.
    pub max_baseline_ratio: f64,
}

impl Default for PairSampling {
    fn default() -> Self {
        Self { max_rotation_deg: 30.0, max_baseline_ratio: 0.3 }
    }
}

pub const MAX_POSE_ATTEMPTS: usize = 100;

/// Camera 1 at the identity pose; camera 2 rotated about a uniformly random
/// axis by an angle uniform in `[0, max_rotation]`, its center uniform in
/// direction with radius in `[0.2, 1] * max_baseline_ratio * d`. Draws are
/// rejected until the plane fills both views.
pub fn sample_pair_pose(
    seed: u64,
    sampling: &PairSampling,
    scene: &PlanarScene,
    k: &CameraIntrinsics,
) -> Result<(AbsolutePose, AbsolutePose), SynthError> {
    if !(sampling.max_rotation_deg > 0.0 && sampling.max_rotation_deg <= 90.0) {
        return Err(SynthError::InvalidScene(format!(
            "max rotation {} must lie in (0, 90] degrees",
            sampling.max_rotation_deg
        )));
    }
    if !(sampling.max_baseline_ratio > 0.0) {
        return Err(SynthError::InvalidScene("baseline ratio must be positive".into()));
    }
    let mut rng = stream_rng(seed, 1);
    let pose1 = AbsolutePose::identity();
    if !scene.fills_view(k, &pose1) {
        return Err(SynthError::PlaneBehindCamera);
    }
    for _ in 0..MAX_POSE_ATTEMPTS {
        let axis: [f64; 3] = UnitSphere.sample(&mut rng);
        let angle = rng.random_range(0.0..=sampling.max_rotation_deg).to_radians();
        let rotation = Rotation3::from_quaternion(&Quaternion::from_axis_angle(&Vector3::from(axis), angle))
            .expect("unit quaternion");
        let dir: [f64; 3] = UnitSphere.sample(&mut rng);
        let radius = rng.random_range(0.2..=1.0) * sampling.max_baseline_ratio * scene.distance;
        let center = Vector3::from(dir) * radius;
        let pose2 = AbsolutePose::new(rotation, -rotation.apply(&center));
        if scene.fills_view(k, &pose2) {
            return Ok((pose1, pose2));
        }
    }
    Err(SynthError::SamplingExhausted(MAX_POSE_ATTEMPTS))
}

fn quantize(rgb: [f64; 3]) -> [u8; 3] {
    rgb.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Sub-samples per pixel axis. Offsets `(k + 0.5) / n` are symmetric under
/// 90 degree image rotations.
pub const SUPERSAMPLE: usize = 3;

/// Renders one view by inverse-mapping sub-pixel samples through the
/// homography back into camera 1, sampling the texture there and averaging
/// over each pixel.
pub fn render_view(scene: &PlanarScene, k: &CameraIntrinsics, pose: &AbsolutePose) -> Result<RgbImage, SynthError> {
    if !scene.fills_view(k, pose) {
        return Err(SynthError::PlaneBehindCamera);
    }
    let h = scene.homography(k, pose);
    let hinv = h.try_inverse().ok_or(SynthError::PlaneBehindCamera)?;
    let (w, ht) = (k.width as usize, k.height as usize);
    let n = SUPERSAMPLE;
    let weight = 1.0 / (n * n) as f64;
    let mut img = RgbImage::new(w, ht);
    for y in 0..ht {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for sy in 0..n {
                for sx in 0..n {
                    let u = x as f64 + (sx as f64 + 0.5) / n as f64;
                    let v = y as f64 + (sy as f64 + 0.5) / n as f64;
                    let p1 = hinv * Vector3::new(u, v, 1.0);
                    if p1.z.abs() < 1e-300 {
                        return Err(SynthError::PlaneBehindCamera);
                    }
                    let uv = Vector2::new(p1.x / p1.z, p1.y / p1.z);
                    let point = scene.point_from_cam1_pixel(k, &uv).ok_or(SynthError::PlaneBehindCamera)?;
                    let c = scene.color_at(&point);
                    for i in 0..3 {
                        acc[i] += weight * c[i];
                    }
                }
            }
            img.put_pixel(x, y, quantize(acc));
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPair {
    pub image1: RgbImage,
    pub image2: RgbImage,
    pub ground_truth: RelativePose,
}

pub fn render_pair(
    scene: &PlanarScene,
    poses: &(AbsolutePose, AbsolutePose),
    k: &CameraIntrinsics,
) -> Result<RenderedPair, SynthError> {
    Ok(RenderedPair {
        image1: render_view(scene, k, &poses.0)?,
        image2: render_view(scene, k, &poses.1)?,
        ground_truth: relative_pose(&poses.0, &poses.1)?,
    })
}

/// Square intrinsics with the principal point at the image center.
pub fn square_intrinsics(size: u32, focal_ratio: f64) -> CameraIntrinsics {
    let f = focal_ratio * size as f64;
    let c = size as f64 / 2.0;
    CameraIntrinsics { fx: f, fy: f, cx: c, cy: c, width: size, height: size }
}

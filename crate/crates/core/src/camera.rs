//! Pinhole cameras, viewing frusta and overlapping view-pair enumeration.

use std::io::Write;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{AbsolutePose, GeomError, Quaternion};

/// Default near plane distance for pair enumeration (scene units).
pub const DEFAULT_NEAR: f64 = 0.1;
/// Default far plane distance for pair enumeration (scene units).
pub const DEFAULT_FAR: f64 = 10.0;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("invalid depth range: near {near} must be positive and below far {far}")]
    InvalidRange { near: f64, far: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("scene file: {0}")]
    Scene(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Zero-skew pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width < 1 || self.height < 1 {
            return Err(CameraError::InvalidIntrinsics("image size must be at least 1x1".into()));
        }
        Ok(())
    }

    /// Pixel to normalized image-plane coordinates.
    pub fn normalize(&self, uv: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((uv.x - self.cx) / self.fx, (uv.y - self.cy) / self.fy)
    }

    pub fn denormalize(&self, xy: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(xy.x * self.fx + self.cx, xy.y * self.fy + self.cy)
    }

    /// Camera-frame point at `depth` along the ray through pixel `uv`.
    pub fn back_project(&self, uv: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let n = self.normalize(uv);
        Vector3::new(n.x * depth, n.y * depth, depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

impl Projection {
    pub fn behind_camera(&self) -> bool {
        self.depth <= 0.0
    }
}

/// Projects a world point; `depth <= 0` flags a point behind the camera.
pub fn project(k: &CameraIntrinsics, pose: &AbsolutePose, x: &Vector3<f64>) -> Projection {
    let c = pose.transform(x);
    Projection {
        pixel: Vector2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy),
        depth: c.z,
    }
}

/// Oriented plane `normal . x = offset`; the inside is `normal . x <= offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Truncated viewing pyramid between the near and far planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Frustum {
    pub apex: Vector3<f64>,
    /// Near face corners 0..4 followed by far face corners 4..8, both in
    /// image-corner order (0,0), (w,0), (w,h), (0,h).
    pub corners: [Vector3<f64>; 8],
    /// Left, right, top, bottom, near, far; outward unit normals.
    pub planes: [Plane; 6],
    pub near: f64,
    pub far: f64,
}

const EDGES: [(usize, usize); 12] = [
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
];

pub fn build_frustum(
    k: &CameraIntrinsics,
    pose: &AbsolutePose,
    near: f64,
    far: f64,
) -> Result<Frustum, CameraError> {
    if !(near > 0.0 && near < far) {
        return Err(CameraError::InvalidRange { near, far });
    }
    let (w, h) = (k.width as f64, k.height as f64);
    let image_corners = [
        Vector2::new(0.0, 0.0),
        Vector2::new(w, 0.0),
        Vector2::new(w, h),
        Vector2::new(0.0, h),
    ];
    let rt = pose.rotation.matrix().transpose();
    let to_world = |c: Vector3<f64>| rt * (c - pose.translation);
    let mut corners = [Vector3::zeros(); 8];
    for (i, uv) in image_corners.iter().enumerate() {
        corners[i] = to_world(k.back_project(uv, near));
        corners[i + 4] = to_world(k.back_project(uv, far));
    }
    let centroid = corners.iter().sum::<Vector3<f64>>() / 8.0;
    let face = |a: usize, b: usize, c: usize| -> Plane {
        let n = (corners[b] - corners[a]).cross(&(corners[c] - corners[a])).normalize();
        let mut plane = Plane { normal: n, offset: n.dot(&corners[a]) };
        if plane.signed_distance(&centroid) > 0.0 {
            plane = Plane { normal: -n, offset: -plane.offset };
        }
        plane
    };
    let planes = [
        face(0, 3, 4), // left: u = 0
        face(1, 2, 5), // right: u = w
        face(0, 1, 4), // top: v = 0
        face(3, 2, 7), // bottom: v = h
        face(0, 1, 2), // near
        face(4, 5, 6), // far
    ];
    Ok(Frustum { apex: pose.center(), corners, planes, near, far })
}

impl Frustum {
    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        self.planes.iter().all(|pl| pl.signed_distance(p) <= tol)
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = self.corners[0];
        let mut hi = self.corners[0];
        for c in &self.corners[1..] {
            lo = lo.inf(c);
            hi = hi.sup(c);
        }
        (lo, hi)
    }

    fn project_onto(&self, axis: &Vector3<f64>) -> (f64, f64) {
        self.corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            let d = axis.dot(c);
            (lo.min(d), hi.max(d))
        })
    }
}

/// Smallest interval overlap over all separating-axis candidates. Negative
/// values are a separation gap, positive values a penetration depth.
pub fn separation_margin(f1: &Frustum, f2: &Frustum) -> f64 {
    let mut axes: Vec<Vector3<f64>> = Vec::with_capacity(12 + 144);
    axes.extend(f1.planes.iter().map(|p| p.normal));
    axes.extend(f2.planes.iter().map(|p| p.normal));
    for &(a0, a1) in &EDGES {
        let e1 = f1.corners[a1] - f1.corners[a0];
        for &(b0, b1) in &EDGES {
            let e2 = f2.corners[b1] - f2.corners[b0];
            let c = e1.cross(&e2);
            let n = c.norm();
            if n > 1e-12 * e1.norm() * e2.norm() && n > 0.0 {
                axes.push(c / n);
            }
        }
    }
    axes.iter()
        .map(|axis| {
            let (lo1, hi1) = f1.project_onto(axis);
            let (lo2, hi2) = f2.project_onto(axis);
            hi1.min(hi2) - lo1.max(lo2)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Exact convex intersection test by the separating axis theorem. Touching
/// frusta count as overlapping.
pub fn frustums_overlap(f1: &Frustum, f2: &Frustum) -> bool {
    separation_margin(f1, f2) >= 0.0
}

/// All index pairs `(i, j)`, `i < j`, whose frusta intersect.
pub fn overlapping_pairs(
    cameras: &[(CameraIntrinsics, AbsolutePose)],
    near: f64,
    far: f64,
) -> Result<Vec<(usize, usize)>, CameraError> {
    let frusta = cameras
        .iter()
        .map(|(k, p)| build_frustum(k, p, near, far))
        .collect::<Result<Vec<_>, _>>()?;
    let mut pairs = Vec::new();
    for i in 0..frusta.len() {
        for j in i + 1..frusta.len() {
            if frustums_overlap(&frusta[i], &frusta[j]) {
                pairs.push((i, j));
            }
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePose {
    /// `[w, x, y, z]`
    pub q: [f64; 4],
    pub t: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCamera {
    pub id: serde_json::Value,
    pub intrinsics: CameraIntrinsics,
    pub pose: ScenePose,
}

/// Scene file: `{"cameras": [{id, intrinsics, pose: {q, t}}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub cameras: Vec<SceneCamera>,
}

impl Scene {
    pub fn from_cameras(cameras: &[(CameraIntrinsics, AbsolutePose)]) -> Self {
        let cameras = cameras
            .iter()
            .enumerate()
            .map(|(i, (k, p))| {
                let q = p.rotation.to_quaternion();
                SceneCamera {
                    id: serde_json::Value::from(i),
                    intrinsics: *k,
                    pose: ScenePose { q: q.to_array(), t: p.translation.into() },
                }
            })
            .collect();
        Self { cameras }
    }

    pub fn load(path: &Path) -> Result<Self, CameraError> {
        let text = std::fs::read_to_string(path).map_err(|e| CameraError::Scene(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CameraError::Scene(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), CameraError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CameraError::Scene(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CameraError::Scene(format!("{}: {e}", path.display())))
    }

    pub fn cameras(&self) -> Result<Vec<(CameraIntrinsics, AbsolutePose)>, CameraError> {
        self.cameras
            .iter()
            .map(|c| {
                c.intrinsics.validate()?;
                let pose = AbsolutePose::from_quat_translation(
                    &Quaternion::from_array(c.pose.q),
                    Vector3::from(c.pose.t),
                )?;
                Ok((c.intrinsics, pose))
            })
            .collect()
    }
}

/// Writes the pair list as CSV with an `i,j` header.
pub fn write_pairs_csv<W: Write>(mut w: W, pairs: &[(usize, usize)]) -> std::io::Result<()> {
    writeln!(w, "i,j")?;
    for (i, j) in pairs {
        writeln!(w, "{i},{j}")?;
    }
    Ok(())
}

//! Quaternion and rotation algebra, relative pose composition and the two
//! angular error metrics (relative orientation / translation error).
//!
//! Pose convention everywhere in this crate: world-to-camera,
//! `x_cam = R * x_world + t`.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Norm below which a quaternion or translation is considered zero.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("quaternion norm {0:e} is too close to zero")]
    NearZeroQuaternion(f64),
    #[error("translation norm {0:e} is too close to zero")]
    NearZeroTranslation(f64),
    #[error("matrix is not a proper rotation (orthonormality defect {0:e})")]
    InvalidRotation(f64),
    #[error("camera centers coincide, baseline norm {0:e}")]
    DegenerateBaseline(f64),
    #[error("pose file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o: {0}")]
    Io(String),
}

/// Quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle_rad` about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64) -> Self {
        let n = axis.norm();
        if n < NORM_EPS {
            return Self::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle_rad).sin_cos();
        Self::new(c, s * a.x, s * a.y, s * a.z)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * o`.
    pub fn mul(&self, o: &Quaternion) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Unit norm, canonical hemisphere (`w >= 0`; when `w == 0` the first
    /// nonzero of `x, y, z` is positive).
    pub fn normalize(self) -> Result<Self, GeomError> {
        quat_normalize(self)
    }

    /// Rotation angle in radians of a unit quaternion, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.w.abs().clamp(0.0, 1.0).acos()
    }
}

impl fmt::Display for Quaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.w, self.x, self.y, self.z)
    }
}

pub fn quat_normalize(q: Quaternion) -> Result<Quaternion, GeomError> {
    let n = q.norm();
    if !(n > NORM_EPS) {
        return Err(GeomError::NearZeroQuaternion(n));
    }
    let u = Quaternion::new(q.w / n, q.x / n, q.y / n, q.z / n);
    let flip = if u.w != 0.0 {
        u.w < 0.0
    } else {
        [u.x, u.y, u.z]
            .into_iter()
            .find(|v| *v != 0.0)
            .is_some_and(|v| v < 0.0)
    };
    Ok(if flip { u.neg() } else { u })
}

/// Proper 3D rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and determinant within `1e-6`.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeomError> {
        let defect = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det_err = (m.determinant() - 1.0).abs();
        let worst = defect.max(det_err);
        if !worst.is_finite() || worst > 1e-6 {
            return Err(GeomError::InvalidRotation(worst));
        }
        Ok(Self(m))
    }

    /// Wraps without validation; caller guarantees the invariants.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation3) -> Self {
        Self(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn from_quaternion(q: &Quaternion) -> Result<Self, GeomError> {
        quat_to_rotation(q)
    }

    pub fn to_quaternion(&self) -> Quaternion {
        rotation_matrix_to_quat(&self.0)
    }

    /// Rotation angle in radians via the trace formula.
    pub fn angle(&self) -> f64 {
        ((self.0.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Converts a quaternion (normalized first) to a rotation matrix.
pub fn quat_to_rotation(q: &Quaternion) -> Result<Rotation3, GeomError> {
    let q = quat_normalize(*q)?;
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    Ok(Rotation3(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )))
}

/// Inverse of [`quat_to_rotation`]; fails when `r` is not a rotation.
pub fn rotation_to_quat(r: &Matrix3<f64>) -> Result<Quaternion, GeomError> {
    Ok(Rotation3::from_matrix(*r)?.to_quaternion())
}

// Shepperd's method: branch on the largest diagonal term for stability.
fn rotation_matrix_to_quat(m: &Matrix3<f64>) -> Quaternion {
    let tr = m.trace();
    let q = if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
        let s = 2.0 * (1.0 + tr).sqrt();
        Quaternion::new(
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
        Quaternion::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = 2.0 * (1.0 - m[(0, 0)] + m[(1, 1)] - m[(2, 2)]).sqrt();
        Quaternion::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = 2.0 * (1.0 - m[(0, 0)] - m[(1, 1)] + m[(2, 2)]).sqrt();
        Quaternion::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        )
    };
    quat_normalize(q).expect("rotation matrix yields a nonzero quaternion")
}

/// Camera pose, world-to-camera: `x_cam = R * x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsolutePose {
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl AbsolutePose {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation3, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_quat_translation(q: &Quaternion, t: Vector3<f64>) -> Result<Self, GeomError> {
        Ok(Self::new(quat_to_rotation(q)?, t))
    }

    pub fn transform(&self, x_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(x_world) + self.translation
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.matrix().transpose() * self.translation)
    }
}

/// Relative orientation `dq` and unit translation direction `dt`, with `dt`
/// expressed in the second camera's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub dq: Quaternion,
    pub dt: Vector3<f64>,
}

impl RelativePose {
    /// Normalizes both parts; the quaternion is also canonicalized.
    pub fn new(dq: Quaternion, dt: Vector3<f64>) -> Result<Self, GeomError> {
        let dq = quat_normalize(dq)?;
        let n = dt.norm();
        if !(n > NORM_EPS) {
            return Err(GeomError::NearZeroTranslation(n));
        }
        Ok(Self { dq, dt: dt / n })
    }

    pub fn identity_rotation(dt: Vector3<f64>) -> Result<Self, GeomError> {
        Self::new(Quaternion::IDENTITY, dt)
    }

    pub fn rotation(&self) -> Rotation3 {
        quat_to_rotation(&self.dq).expect("unit quaternion")
    }

    /// The seven numbers `[qw, qx, qy, qz, tx, ty, tz]`.
    pub fn to_vector(&self) -> [f64; 7] {
        [self.dq.w, self.dq.x, self.dq.y, self.dq.z, self.dt.x, self.dt.y, self.dt.z]
    }
}

impl fmt::Display for RelativePose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.dq, self.dt.x, self.dt.y, self.dt.z)
    }
}

/// Relative pose mapping camera `i` coordinates into camera `j`:
/// `R_ij = R_j R_i^T`, `t_ij = t_j - R_ij t_i`, direction normalized.
pub fn relative_pose(pose_i: &AbsolutePose, pose_j: &AbsolutePose) -> Result<RelativePose, GeomError> {
    let r_ij = pose_j.rotation.compose(&pose_i.rotation.transpose());
    let t_ij = pose_j.translation - r_ij.apply(&pose_i.translation);
    let n = t_ij.norm();
    if !(n > 1e-9) {
        return Err(GeomError::DegenerateBaseline(n));
    }
    Ok(RelativePose { dq: r_ij.to_quaternion(), dt: t_ij / n })
}

/// Relative orientation error in degrees, `2 acos |<q_est, q_gt>|`.
pub fn roe(q_est: &Quaternion, q_gt: &Quaternion) -> Result<f64, GeomError> {
    let a = quat_normalize(*q_est)?;
    let b = quat_normalize(*q_gt)?;
    Ok((2.0 * a.dot(&b).abs().clamp(0.0, 1.0).acos()).to_degrees())
}

/// Relative translation error in degrees: angle between the two directions.
pub fn rte(t_est: &Vector3<f64>, t_gt: &Vector3<f64>) -> Result<f64, GeomError> {
    let (na, nb) = (t_est.norm(), t_gt.norm());
    if !(na > NORM_EPS) {
        return Err(GeomError::NearZeroTranslation(na));
    }
    if !(nb > NORM_EPS) {
        return Err(GeomError::NearZeroTranslation(nb));
    }
    Ok((t_est.dot(t_gt) / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees())
}

/// One entry of the pose text format `id qw qx qy qz tx ty tz`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEntry {
    pub id: String,
    pub pose: AbsolutePose,
}

pub fn read_pose_text<R: BufRead>(reader: R) -> Result<Vec<PoseEntry>, GeomError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| GeomError::Io(e.to_string()))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(GeomError::Parse {
                line: idx + 1,
                msg: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let mut nums = [0.0; 7];
        for (k, f) in fields[1..].iter().enumerate() {
            nums[k] = f.parse().map_err(|_| GeomError::Parse {
                line: idx + 1,
                msg: format!("invalid number {f:?}"),
            })?;
        }
        let q = Quaternion::new(nums[0], nums[1], nums[2], nums[3]);
        let pose = AbsolutePose::from_quat_translation(&q, Vector3::new(nums[4], nums[5], nums[6]))?;
        out.push(PoseEntry { id: fields[0].to_string(), pose });
    }
    Ok(out)
}

pub fn write_pose_text<W: Write>(mut w: W, entries: &[PoseEntry]) -> Result<(), GeomError> {
    let io = |e: std::io::Error| GeomError::Io(e.to_string());
    writeln!(w, "# id qw qx qy qz tx ty tz").map_err(io)?;
    for e in entries {
        let q = e.pose.rotation.to_quaternion();
        let t = e.pose.translation;
        writeln!(w, "{} {} {} {} {} {} {} {}", e.id, q.w, q.x, q.y, q.z, t.x, t.y, t.z).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normalize_examples() {
        let q = quat_normalize(Quaternion::new(2.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(q, Quaternion::IDENTITY);
        let q = quat_normalize(Quaternion::new(-1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(q, Quaternion::IDENTITY);
        let q = quat_normalize(Quaternion::new(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(q, Quaternion::new(0.5, 0.5, 0.5, 0.5));
        let q = quat_normalize(Quaternion::new(0.0, 0.0, -3.0, 4.0)).unwrap();
        assert_eq!(q, Quaternion::new(0.0, 0.0, 0.6, -0.8));
        assert!(matches!(
            quat_normalize(Quaternion::new(0.0, 1e-13, 0.0, 0.0)),
            Err(GeomError::NearZeroQuaternion(_))
        ));
    }

    #[test]
    fn quaternion_to_matrix_examples() {
        let r = quat_to_rotation(&Quaternion::IDENTITY).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
        let r = quat_to_rotation(&Quaternion::new(FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2)).unwrap();
        let expect = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r.matrix() - expect).abs().max() < 1e-12);
    }

    #[test]
    fn invalid_rotation_rejected() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(matches!(rotation_to_quat(&m), Err(GeomError::InvalidRotation(_))));
        let m = Matrix3::identity() * 1.01;
        assert!(rotation_to_quat(&m).is_err());
    }

    #[test]
    fn relative_pose_examples() {
        let p = AbsolutePose::identity();
        assert!(matches!(relative_pose(&p, &p), Err(GeomError::DegenerateBaseline(_))));
        let pj = AbsolutePose::new(Rotation3::identity(), Vector3::new(1.0, 0.0, 0.0));
        let rel = relative_pose(&p, &pj).unwrap();
        assert_eq!(rel.dq, Quaternion::IDENTITY);
        assert_eq!(rel.dt, Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn metric_examples() {
        let q = Quaternion::new(0.3, -0.2, 0.5, 0.1).normalize().unwrap();
        assert_eq!(roe(&q, &q).unwrap(), 0.0);
        assert!(roe(&q, &q.neg()).unwrap() < 1e-6);
        let z90 = Quaternion::new(FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2);
        assert!(close(roe(&Quaternion::IDENTITY, &z90).unwrap(), 90.0, 1e-9));

        let t = Vector3::new(0.2, -1.0, 3.0);
        assert_eq!(rte(&t, &t).unwrap(), 0.0);
        assert!(close(rte(&Vector3::x(), &Vector3::y()).unwrap(), 90.0, 1e-12));
        assert!(close(rte(&t, &-t).unwrap(), 180.0, 1e-9));
        assert!(matches!(rte(&Vector3::zeros(), &t), Err(GeomError::NearZeroTranslation(_))));
    }

    #[test]
    fn pose_text_round_trip() {
        let text = "# cameras\n\
                    a 1 0 0 0 0 0 0\n\
                    \n\
                    b 0.7071067811865476 0 0 0.7071067811865476 1 2 3 # trailing\n";
        let entries = read_pose_text(text.as_bytes()).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[1].id, "b");
        let mut buf = Vec::new();
        write_pose_text(&mut buf, &entries).unwrap();
        let again = read_pose_text(buf.as_slice()).unwrap();
        for (a, b) in entries.iter().zip(&again) {
            assert!((a.pose.rotation.matrix() - b.pose.rotation.matrix()).abs().max() < 1e-12);
            assert_eq!(a.pose.translation, b.pose.translation);
        }
        assert!(matches!(
            read_pose_text("x 1 0 0\n".as_bytes()),
            Err(GeomError::Parse { line: 1, .. })
        ));
    }

    fn unit_quat() -> impl Strategy<Value = Quaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| Quaternion::new(w, x, y, z).normalize().unwrap())
    }

    fn pose() -> impl Strategy<Value = AbsolutePose> {
        (unit_quat(), -5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(q, x, y, z)| {
            AbsolutePose::from_quat_translation(&q, Vector3::new(x, y, z)).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn quat_matrix_round_trip(q in unit_quat()) {
            let r = quat_to_rotation(&q).unwrap();
            let m = r.matrix();
            prop_assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
            let back = rotation_to_quat(m).unwrap();
            for (a, b) in q.to_array().iter().zip(back.to_array()) {
                prop_assert!((a - b).abs() < 1e-9, "{:?} vs {:?}", q, back);
            }
        }

        #[test]
        fn roe_matches_trace_formula(a in unit_quat(), b in unit_quat()) {
            let ra = quat_to_rotation(&a).unwrap();
            let rb = quat_to_rotation(&b).unwrap();
            let m = ra.matrix() * rb.matrix().transpose();
            let oracle = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees();
            let got = roe(&a, &b).unwrap();
            // acos loses precision near 0 in the trace route
            let tol = if oracle < 0.1 { 1e-4 } else { 1e-6 };
            prop_assert!((got - oracle).abs() < tol, "{} vs {}", got, oracle);
        }

        #[test]
        fn roe_symmetry_and_scale(a in unit_quat(), b in unit_quat(), s in 0.01..100.0f64) {
            let d = roe(&a, &b).unwrap();
            prop_assert!((d - roe(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((d - roe(&a.neg(), &b).unwrap()).abs() < 1e-12);
            let scaled = Quaternion::new(a.w * s, a.x * s, a.y * s, a.z * s);
            prop_assert!((d - roe(&scaled, &b).unwrap()).abs() < 1e-6);
            prop_assert!((0.0..=180.0).contains(&d));
        }

        #[test]
        fn rte_scale_invariant(x in -3.0..3.0f64, y in -3.0..3.0f64, z in 0.1..3.0f64, s in 0.01..100.0f64) {
            let t = Vector3::new(x, y, z);
            let u = Vector3::new(z, x, -y);
            prop_assert!((rte(&t, &u).unwrap() - rte(&(t * s), &u).unwrap()).abs() < 1e-6);
        }

        #[test]
        fn relative_pose_consistency(pi in pose(), pj in pose(), wx in -3.0..3.0f64, wy in -3.0..3.0f64, wz in -3.0..3.0f64) {
            prop_assume!((pi.center() - pj.center()).norm() > 1e-3);
            let rel = relative_pose(&pi, &pj).unwrap();
            let x = Vector3::new(wx, wy, wz);
            let xi = pi.transform(&x);
            let xj = pj.transform(&x);
            // xj - R_ij xi must be parallel to dt
            let r_ij = rel.rotation();
            let resid = xj - r_ij.apply(&xi);
            let s = resid.dot(&rel.dt);
            prop_assert!((resid - rel.dt * s).norm() < 1e-9 * (1.0 + resid.norm()));
            prop_assert!((rel.dt.norm() - 1.0).abs() < 1e-9);
            prop_assert!((rel.dq.norm() - 1.0).abs() < 1e-9);

            let back = relative_pose(&pj, &pi).unwrap();
            let prod = r_ij.compose(&back.rotation());
            prop_assert!((prod.matrix() - Matrix3::identity()).abs().max() < 1e-9);
        }
    }
}

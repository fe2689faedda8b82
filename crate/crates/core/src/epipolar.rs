//! Classical two-view baseline: essential matrix from calibrated
//! correspondences (normalized 8-point solver inside RANSAC), then relative
//! pose by decomposition and positive-depth voting.
//!
//! Convention: `x2^T E x1 = 0` with `E = [t]x R`, where a point in camera 1
//! maps to camera 2 as `X2 = R X1 + t`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector2, Vector3, Vector4};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::geom::{AbsolutePose, GeomError, RelativePose, Rotation3};

/// Matches per minimal sample of the 8-point solver.
pub const SAMPLE_SIZE: usize = 8;

#[derive(Debug, Error)]
pub enum EpipolarError {
    #[error("degenerate sample: constraint matrix rank below 8 (ratio {0:e})")]
    DegenerateSample(f64),
    #[error("need at least {needed} matches, got {got}")]
    InsufficientMatches { needed: usize, got: usize },
    #[error("no essential matrix found: every sample was degenerate")]
    NoModelFound,
    #[error("cheirality ambiguous: {0} decompositions tie on positive-depth count")]
    CheiralityAmbiguous(usize),
    #[error("rays are parallel, point cannot be triangulated")]
    RaysParallel,
    #[error("no inliers given for decomposition")]
    NoInliers,
    #[error("match file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Pixel correspondence `(u1, v1) <-> (u2, v2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMatch {
    pub u1: f64,
    pub v1: f64,
    pub u2: f64,
    pub v2: f64,
}

/// Correspondence in normalized image-plane coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedMatch {
    pub x1: Vector2<f64>,
    pub x2: Vector2<f64>,
}

impl NormalizedMatch {
    fn h1(&self) -> Vector3<f64> {
        Vector3::new(self.x1.x, self.x1.y, 1.0)
    }

    fn h2(&self) -> Vector3<f64> {
        Vector3::new(self.x2.x, self.x2.y, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub matches: Vec<PixelMatch>,
    pub k1: CameraIntrinsics,
    pub k2: CameraIntrinsics,
    /// Ground-truth inlier flags when known (synthetic data).
    pub inlier_mask: Option<Vec<bool>>,
}

impl CorrespondenceSet {
    pub fn new(matches: Vec<PixelMatch>, k1: CameraIntrinsics, k2: CameraIntrinsics) -> Self {
        Self { matches, k1, k2, inlier_mask: None }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

/// Maps pixels to the unit image plane: `x = (u - cx) / fx`, `y = (v - cy) / fy`.
pub fn normalize_points(c: &CorrespondenceSet) -> Vec<NormalizedMatch> {
    c.matches
        .iter()
        .map(|m| NormalizedMatch {
            x1: c.k1.normalize(&Vector2::new(m.u1, m.v1)),
            x2: c.k2.normalize(&Vector2::new(m.u2, m.v2)),
        })
        .collect()
}

/// Essential matrix on the manifold: singular values `(1, 1, 0)`, so the
/// Frobenius norm is `sqrt(2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    /// Closest essential matrix: singular values replaced by `(s, s, 0)`,
    /// `s = (s1 + s2) / 2`, then scaled to unit singular values.
    pub fn project(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("u requested");
        let vt = svd.v_t.expect("v_t requested");
        let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
        Self(u * d * vt)
    }

    /// `[t]x R` projected to the manifold.
    pub fn from_pose(r: &Rotation3, t: &Vector3<f64>) -> Self {
        Self::project(&(skew(t) * r.matrix()))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Epipolar residual `x2^T E x1`.
    pub fn residual(&self, m: &NormalizedMatch) -> f64 {
        m.h2().dot(&(self.0 * m.h1()))
    }
}

pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

// Isotropic conditioning: centroid to origin, mean distance sqrt(2).
fn conditioning(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Option<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let centroid = points.clone().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.map(|p| (p - centroid).norm()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0))
}

/// Least-squares essential matrix from eight or more normalized matches.
pub fn estimate_essential(matches: &[NormalizedMatch]) -> Result<EssentialMatrix, EpipolarError> {
    if matches.len() < SAMPLE_SIZE {
        return Err(EpipolarError::InsufficientMatches { needed: SAMPLE_SIZE, got: matches.len() });
    }
    let t1 = conditioning(matches.iter().map(|m| m.x1)).ok_or(EpipolarError::DegenerateSample(0.0))?;
    let t2 = conditioning(matches.iter().map(|m| m.x2)).ok_or(EpipolarError::DegenerateSample(0.0))?;
    let rows = matches.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, m) in matches.iter().enumerate() {
        let p = t1 * m.h1();
        let q = t2 * m.h2();
        for r in 0..3 {
            for c in 0..3 {
                a[(i, 3 * r + c)] = q[r] * p[c];
            }
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let sv = &svd.singular_values;
    let ratio = sv[7] / sv[0].max(f64::MIN_POSITIVE);
    if !(ratio > 1e-10) {
        return Err(EpipolarError::DegenerateSample(ratio));
    }
    // smallest singular value is last (descending order)
    let (min_idx, _) = sv.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let f = Matrix3::from_fn(|r, c| vt[(min_idx, 3 * r + c)]);
    let raw = t2.transpose() * f * t1;
    Ok(EssentialMatrix::project(&raw))
}

/// Minimal-sample variant of [`estimate_essential`] (exactly eight matches).
pub fn estimate_essential_minimal(sample: &[NormalizedMatch; SAMPLE_SIZE]) -> Result<EssentialMatrix, EpipolarError> {
    estimate_essential(sample)
}

/// First-order geometric error `(x2^T E x1)^2 / (|(E x1)_12|^2 + |(E^T x2)_12|^2)`.
/// Returns `+inf` when the denominator vanishes.
pub fn sampson_error(e: &EssentialMatrix, m: &NormalizedMatch) -> f64 {
    sampson_raw(e.matrix(), m)
}

pub(crate) fn sampson_raw(e: &Matrix3<f64>, m: &NormalizedMatch) -> f64 {
    let ex1 = e * m.h1();
    let etx2 = e.transpose() * m.h2();
    let num = m.h2().dot(&ex1);
    let den = ex1.x * ex1.x + ex1.y * ex1.y + etx2.x * etx2.x + etx2.y * etx2.y;
    if den < 1e-30 {
        f64::INFINITY
    } else {
        num * num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Inlier threshold on the Sampson distance (square root of
    /// [`sampson_error`]), normalized units.
    pub threshold: f64,
    pub confidence: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { threshold: 1e-3, confidence: 0.999, max_iters: 10_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub essential: EssentialMatrix,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn inlier_mask(e: &EssentialMatrix, matches: &[NormalizedMatch], threshold: f64) -> Vec<bool> {
    let t2 = threshold * threshold;
    matches.iter().map(|m| sampson_error(e, m) < t2).collect()
}

/// Adaptive RANSAC over 8-point hypotheses. The best hypothesis is the one
/// with most inliers; on equal counts the earliest wins. The winner is then
/// refit on its inliers (8-point plus [`refine_essential`]) repeatedly while
/// the inlier set keeps growing; a refit that loses inliers is discarded.
const REFIT_ROUNDS: usize = 10;

pub fn ransac_essential(c: &CorrespondenceSet, cfg: &RansacConfig) -> Result<RansacResult, EpipolarError> {
    ransac_normalized(&normalize_points(c), cfg)
}

pub fn ransac_normalized(matches: &[NormalizedMatch], cfg: &RansacConfig) -> Result<RansacResult, EpipolarError> {
    let n = matches.len();
    if n < SAMPLE_SIZE {
        return Err(EpipolarError::InsufficientMatches { needed: SAMPLE_SIZE, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(EssentialMatrix, Vec<bool>, usize)> = None;
    let mut bound = cfg.max_iters;
    let mut iter = 0;
    while iter < bound.min(cfg.max_iters) {
        iter += 1;
        let idx = index::sample(&mut rng, n, SAMPLE_SIZE);
        let sample: [NormalizedMatch; SAMPLE_SIZE] = std::array::from_fn(|k| matches[idx.index(k)]);
        let Ok(e) = estimate_essential_minimal(&sample) else { continue };
        let mask = inlier_mask(&e, matches, cfg.threshold);
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|(_, _, c)| count > *c) {
            let w = count as f64 / n as f64;
            bound = adaptive_bound(w, cfg.confidence, SAMPLE_SIZE, cfg.max_iters);
            best = Some((e, mask, count));
        }
    }
    let (mut e, mut mask, mut count) = best.ok_or(EpipolarError::NoModelFound)?;
    for _ in 0..REFIT_ROUNDS {
        let inliers: Vec<NormalizedMatch> =
            matches.iter().zip(&mask).filter(|(_, &b)| b).map(|(m, _)| *m).collect();
        let Ok(refit) = estimate_essential(&inliers) else { break };
        let refit = refine_essential(&refit, &inliers);
        let refit_mask = inlier_mask(&refit, matches, cfg.threshold);
        let refit_count = refit_mask.iter().filter(|&&b| b).count();
        if refit_count < count {
            break;
        }
        let grew = refit_count > count;
        (e, mask, count) = (refit, refit_mask, refit_count);
        if !grew {
            break;
        }
    }
    Ok(RansacResult { essential: e, inliers: mask, iterations: iter })
}

fn sampson_residuals(e: &Matrix3<f64>, matches: &[NormalizedMatch]) -> DVector<f64> {
    DVector::from_iterator(
        matches.len(),
        matches.iter().map(|m| {
            let d = sampson_raw(e, m);
            if d.is_finite() { d.sqrt() } else { 0.0 }
        }),
    )
}

/// Levenberg-Marquardt on the Sampson distances of `matches`, over `E = [t]x R`
/// with `R` updated by a rotation vector and `t` kept on the unit sphere.
/// Returns `e` unchanged if it cannot be improved.
pub fn refine_essential(e: &EssentialMatrix, matches: &[NormalizedMatch]) -> EssentialMatrix {
    if matches.len() < 6 {
        return *e;
    }
    let (r0, t0) = pose_candidates(e)[0];
    let (mut r, mut t) = (*r0.matrix(), t0.normalize());
    let build = |r: &Matrix3<f64>, t: &Vector3<f64>, p: &[f64]| -> (Matrix3<f64>, Vector3<f64>) {
        let helper = if t.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let b1 = t.cross(&helper).normalize();
        let b2 = t.cross(&b1);
        let dr = nalgebra::Rotation3::new(Vector3::new(p[0], p[1], p[2])).into_inner();
        (dr * r, (t + b1 * p[3] + b2 * p[4]).normalize())
    };
    let mut res = sampson_residuals(&(skew(&t) * r), matches);
    let mut cost = res.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..50 {
        let mut jac = DMatrix::<f64>::zeros(matches.len(), 5);
        for k in 0..5 {
            let mut p = [0.0; 5];
            p[k] = 1e-7;
            let (rk, tk) = build(&r, &t, &p);
            jac.set_column(k, &((sampson_residuals(&(skew(&tk) * rk), matches) - &res) / 1e-7));
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &res;
        let mut improved = false;
        while lambda < 1e10 {
            let mut a = jtj.clone();
            for k in 0..5 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else { break };
            let (rn, tn) = build(&r, &t, step.as_slice());
            let rn_res = sampson_residuals(&(skew(&tn) * rn), matches);
            let c = rn_res.norm_squared();
            if c < cost {
                improved = cost - c > 1e-12 * cost;
                (r, t, res, cost) = (rn, tn, rn_res, c);
                lambda = (lambda * 0.3).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    EssentialMatrix::project(&(skew(&t) * r))
}

/// `N = log(1 - p) / log(1 - w^s)`, capped at `max_iters`.
pub fn adaptive_bound(inlier_ratio: f64, confidence: f64, sample: usize, max_iters: usize) -> usize {
    let ws = inlier_ratio.powi(sample as i32);
    if ws <= 0.0 {
        return max_iters;
    }
    if ws >= 1.0 {
        return 1;
    }
    let n = (1.0 - confidence).ln() / (1.0 - ws).ln();
    if n.is_finite() && n >= 0.0 {
        (n.ceil() as usize).clamp(1, max_iters)
    } else {
        max_iters
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulated {
    pub point: Vector3<f64>,
    pub depth1: f64,
    pub depth2: f64,
}

/// Linear (DLT) triangulation from normalized coordinates.
pub fn triangulate(
    pose1: &AbsolutePose,
    pose2: &AbsolutePose,
    m: &NormalizedMatch,
) -> Result<Triangulated, EpipolarError> {
    let rows = |p: &AbsolutePose, x: &Vector2<f64>| -> [Vector4<f64>; 2] {
        let r = p.rotation.matrix();
        let row = |i: usize| Vector4::new(r[(i, 0)], r[(i, 1)], r[(i, 2)], p.translation[i]);
        [row(2) * x.x - row(0), row(2) * x.y - row(1)]
    };
    let [a0, a1] = rows(pose1, &m.x1);
    let [a2, a3] = rows(pose2, &m.x2);
    let mut a = Matrix4::from_rows(&[a0.transpose(), a1.transpose(), a2.transpose(), a3.transpose()]);
    for mut r in a.row_iter_mut() {
        let n = r.norm();
        if n > 0.0 {
            r /= n;
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let sv = svd.singular_values;
    let (min_idx, _) = sv.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let mut second = f64::INFINITY;
    for (i, &s) in sv.iter().enumerate() {
        if i != min_idx {
            second = second.min(s);
        }
    }
    let h = vt.row(min_idx).transpose();
    if second / sv.max() < 1e-12 || h[3].abs() < 1e-12 * h.norm() {
        return Err(EpipolarError::RaysParallel);
    }
    let point = Vector3::new(h[0], h[1], h[2]) / h[3];
    Ok(Triangulated {
        point,
        depth1: pose1.transform(&point).z,
        depth2: pose2.transform(&point).z,
    })
}

/// The four `(R, t)` factorizations of `E`, in the order
/// `(R1, u3), (R1, -u3), (R2, u3), (R2, -u3)`.
pub fn pose_candidates(e: &EssentialMatrix) -> [(Rotation3, Vector3<f64>); 4] {
    let svd = e.matrix().svd(true, true);
    let mut u = svd.u.expect("u requested");
    let mut v = svd.v_t.expect("v_t requested").transpose();
    // the null direction is the column with the smallest singular value
    let (k, _) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    if k != 2 {
        u.swap_columns(k, 2);
        v.swap_columns(k, 2);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v.determinant() < 0.0 {
        v = -v;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = Rotation3::from_matrix_unchecked(u * w * v.transpose());
    let r2 = Rotation3::from_matrix_unchecked(u * w.transpose() * v.transpose());
    let t: Vector3<f64> = u.column(2).into();
    [(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Selects the factorization that places the most matches in front of both
/// cameras.
pub fn decompose_essential(e: &EssentialMatrix, inliers: &[NormalizedMatch]) -> Result<RelativePose, EpipolarError> {
    if inliers.is_empty() {
        return Err(EpipolarError::NoInliers);
    }
    let first = AbsolutePose::identity();
    let counts: Vec<(usize, Rotation3, Vector3<f64>)> = pose_candidates(e)
        .into_iter()
        .map(|(r, t)| {
            let second = AbsolutePose::new(r, t);
            let n = inliers
                .iter()
                .filter(|m| triangulate(&first, &second, m).is_ok_and(|p| p.depth1 > 0.0 && p.depth2 > 0.0))
                .count();
            (n, r, t)
        })
        .collect();
    let best = counts.iter().map(|c| c.0).max().expect("four candidates");
    let tied = counts.iter().filter(|c| c.0 == best).count();
    if tied > 1 {
        return Err(EpipolarError::CheiralityAmbiguous(tied));
    }
    let (_, r, t) = counts.into_iter().find(|c| c.0 == best).expect("winner exists");
    Ok(RelativePose::new(r.to_quaternion(), t)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEstimate {
    pub pose: RelativePose,
    pub essential: EssentialMatrix,
    pub inliers: Vec<bool>,
}

/// Normalization, RANSAC and decomposition in one call.
pub fn estimate_relative_pose(c: &CorrespondenceSet, cfg: &RansacConfig) -> Result<BaselineEstimate, EpipolarError> {
    let normalized = normalize_points(c);
    let ransac = ransac_normalized(&normalized, cfg)?;
    let inliers: Vec<NormalizedMatch> =
        normalized.iter().zip(&ransac.inliers).filter(|(_, &b)| b).map(|(m, _)| *m).collect();
    let pose = decompose_essential(&ransac.essential, &inliers)?;
    Ok(BaselineEstimate { pose, essential: ransac.essential, inliers: ransac.inliers })
}

/// Reads a `u1,v1,u2,v2` CSV with a header row.
pub fn read_matches_csv<R: BufRead>(reader: R) -> Result<Vec<PixelMatch>, EpipolarError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 || line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| EpipolarError::Parse { line: i + 1, msg: e.to_string() })?;
        if vals.len() != 4 || vals.iter().any(|v| !v.is_finite()) {
            return Err(EpipolarError::Parse { line: i + 1, msg: "expected four finite values".into() });
        }
        out.push(PixelMatch { u1: vals[0], v1: vals[1], u2: vals[2], v2: vals[3] });
    }
    Ok(out)
}

pub fn write_matches_csv<W: Write>(mut w: W, matches: &[PixelMatch]) -> std::io::Result<()> {
    writeln!(w, "u1,v1,u2,v2")?;
    for m in matches {
        writeln!(w, "{},{},{},{}", m.u1, m.v1, m.u2, m.v2)?;
    }
    Ok(())
}

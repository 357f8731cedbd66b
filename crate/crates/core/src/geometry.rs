//! Pinhole homographies: construction from rigid motion, DLT estimation,
//! composition, and the 8-parameter canonical form.
//!
//! Conventions: camera X right, Y down, Z forward. Rotations compose as
//! `Rz * Ry * Rx`. A [`RigidMotion`] maps point coordinates expressed in the
//! camera frame at time t to the camera frame at time t+1.

use nalgebra::{DMatrix, Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Entries with magnitude below this are treated as zero (m22, det, w).
pub const DEGENERACY_EPS: f64 = 1e-12;

/// Relative singular value gap under which a DLT design matrix counts as
/// rank deficient.
const DLT_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("plane depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("plane normal must be unit length, got norm {0}")]
    NonUnitNormal(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate homography: {0}")]
    DegenerateHomography(&'static str),
    #[error("degenerate correspondence configuration")]
    DegenerateConfiguration,
    #[error("need at least 4 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("non-finite correspondence at index {0}")]
    NonFiniteCorrespondence(usize),
    #[error("point maps to infinity (w = {0:e})")]
    PointAtInfinity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
    ) -> Result<Self, GeometryError> {
        let k = CameraIntrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// World camera at the 192x144 working resolution (~77 deg horizontal FOV).
    pub fn world_default() -> Self {
        CameraIntrinsics { fx: 120.0, fy: 120.0, cx: 96.0, cy: 72.0, width: 192.0, height: 144.0 }
    }

    /// Eye camera at the 192x192 working resolution.
    pub fn eye_default() -> Self {
        CameraIntrinsics { fx: 160.0, fy: 160.0, cx: 96.0, cy: 96.0, width: 192.0, height: 192.0 }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.width, self.height];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("non-finite field".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width && self.cy > 0.0 && self.cy < self.height) {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// The four image corners, clockwise from the origin.
    pub fn corners(&self) -> [Point2<f64>; 4] {
        [
            Point2::new(0.0, 0.0),
            Point2::new(self.width, 0.0),
            Point2::new(self.width, self.height),
            Point2::new(0.0, self.height),
        ]
    }
}

/// Rotation angles (radians) about the camera axes plus a translation (meters).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidMotion {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl RigidMotion {
    pub fn rotation(rx: f64, ry: f64, rz: f64) -> Self {
        RigidMotion { rx, ry, rz, ..Default::default() }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_matrix(self.rx, self.ry, self.rz)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.tx, self.ty, self.tz)
    }
}

/// `Rz(rz) * Ry(ry) * Rx(rx)`.
pub fn rotation_matrix(rx: f64, ry: f64, rz: f64) -> Matrix3<f64> {
    let (sx, cx) = rx.sin_cos();
    let (sy, cy) = ry.sin_cos();
    let (sz, cz) = rz.sin_cos();
    let rot_x = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let rot_y = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rot_z = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    rot_z * rot_y * rot_x
}

/// Inverse of [`rotation_matrix`] for `|ry| < pi/2`. Returns `(rx, ry, rz)`.
pub fn euler_angles(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let ry = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let rx = r[(2, 1)].atan2(r[(2, 2)]);
    let rz = r[(1, 0)].atan2(r[(0, 0)]);
    (rx, ry, rz)
}

/// A 3x3 projective transform normalized so that `m[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Homography { m: Matrix3::identity() }
    }

    /// Normalizes by `m[2][2]` and rejects non-invertible or non-finite matrices.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::DegenerateHomography("non-finite entry"));
        }
        let m22 = m[(2, 2)];
        if m22.abs() < DEGENERACY_EPS {
            return Err(GeometryError::DegenerateHomography("m22 is zero"));
        }
        let m = m / m22;
        if m.determinant().abs() <= DEGENERACY_EPS {
            return Err(GeometryError::DegenerateHomography("singular matrix"));
        }
        Ok(Homography { m })
    }

    /// Inverse of [`Homography::to_param8`].
    pub fn from_param8(p: &[f64; 8]) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Row-major reading of the eight entries other than `m[2][2]`.
    pub fn to_param8(&self) -> [f64; 8] {
        let m = &self.m;
        [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)]]
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let inv = self
            .m
            .try_inverse()
            .ok_or(GeometryError::DegenerateHomography("singular matrix"))?;
        Self::from_matrix(inv)
    }

    /// `self` applied after `first`, i.e. the matrix product `self * first`.
    pub fn after(&self, first: &Homography) -> Result<Self, GeometryError> {
        compose(self, first)
    }

    pub fn apply(&self, p: Point2<f64>) -> Result<Point2<f64>, GeometryError> {
        let v = self.m * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() < DEGENERACY_EPS {
            return Err(GeometryError::PointAtInfinity(v.z));
        }
        Ok(Point2::new(v.x / v.z, v.y / v.z))
    }

    pub fn determinant(&self) -> f64 {
        self.m.determinant()
    }

    pub fn frobenius_distance(&self, other: &Homography) -> f64 {
        (self.m - other.m).norm()
    }
}

/// `compose(h2, h1)` maps points as `h2 ∘ h1`.
pub fn compose(h2: &Homography, h1: &Homography) -> Result<Homography, GeometryError> {
    Homography::from_matrix(h2.m * h1.m)
}

pub fn to_param8(h: &Homography) -> [f64; 8] {
    h.to_param8()
}

/// Planar-scene homography `K (R + t n^T / d) K^-1`.
///
/// The plane satisfies `n . X = d` in the coordinates of the first camera.
pub fn homography_from_motion(
    k: &CameraIntrinsics,
    motion: &RigidMotion,
    plane_normal: &Vector3<f64>,
    plane_depth: f64,
) -> Result<Homography, GeometryError> {
    homography_from_pose(k, &motion.rotation_matrix(), &motion.translation(), plane_normal, plane_depth)
}

/// Like [`homography_from_motion`] with the rotation given as a matrix.
pub fn homography_from_pose(
    k: &CameraIntrinsics,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    plane_normal: &Vector3<f64>,
    plane_depth: f64,
) -> Result<Homography, GeometryError> {
    if !(plane_depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(plane_depth));
    }
    let norm = plane_normal.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(GeometryError::NonUnitNormal(norm));
    }
    let euclidean = rotation + translation * plane_normal.transpose() / plane_depth;
    Homography::from_matrix(k.matrix() * euclidean * k.inverse_matrix())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub src: Point2<f64>,
    pub dst: Point2<f64>,
}

impl Correspondence {
    pub fn new(src: Point2<f64>, dst: Point2<f64>) -> Self {
        Correspondence { src, dst }
    }
}

/// Similarity transform moving the centroid to the origin with mean
/// distance sqrt(2).
fn hartley_transform(points: impl Iterator<Item = Point2<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
    let (mx, my) = (sx / n, sy / n);
    let mean_dist = points.map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

/// Normalized direct linear transform. Exact correspondences are recovered
/// to rounding error.
pub fn estimate_homography_dlt(correspondences: &[Correspondence]) -> Result<Homography, GeometryError> {
    let n = correspondences.len();
    if n < 4 {
        return Err(GeometryError::TooFewCorrespondences(n));
    }
    for (i, c) in correspondences.iter().enumerate() {
        if !(c.src.x.is_finite() && c.src.y.is_finite() && c.dst.x.is_finite() && c.dst.y.is_finite()) {
            return Err(GeometryError::NonFiniteCorrespondence(i));
        }
    }
    let t_src = hartley_transform(correspondences.iter().map(|c| c.src));
    let t_dst = hartley_transform(correspondences.iter().map(|c| c.dst));

    // Pad to at least 9 rows so the SVD yields a full right singular basis.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in correspondences.iter().enumerate() {
        let s = t_src * Vector3::new(c.src.x, c.src.y, 1.0);
        let d = t_dst * Vector3::new(c.dst.x, c.dst.y, 1.0);
        let (x, y) = (s.x / s.z, s.y / s.z);
        let (u, v) = (d.x / d.z, d.y / d.z);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    let second_smallest = svd.singular_values[order[1]];
    if !(largest > 0.0) || second_smallest / largest < DLT_RANK_TOL {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let h = v_t.row(order[0]);
    let h_norm = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst.try_inverse().ok_or(GeometryError::DegenerateConfiguration)?;
    Homography::from_matrix(t_dst_inv * h_norm * t_src).map_err(|_| GeometryError::DegenerateConfiguration)
}

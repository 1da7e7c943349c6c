//! Rigid transforms, rotations, pinhole intrinsics and projection.
//!
//! Units are millimeters for every length and pixels for image coordinates.
//! A [`Pose`] named `pose_a_b` maps points expressed in frame `b` into frame
//! `a`, so `pose_mc_cam` is the camera expressed in the motion-capture frame.

use nalgebra as na;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = na::Point3<f64>;
pub type Point2 = na::Point2<f64>;
pub type Vector3 = na::Vector3<f64>;

/// Near clipping distance in millimeters. Points with camera-frame depth at or
/// below this value do not project.
pub const Z_NEAR: f64 = 1.0;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
    #[error("matrix is not a finite proper rotation")]
    NotARotation,
    #[error("non-finite translation")]
    NonFiniteTranslation,
}

/// Proper orthonormal 3x3 rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(na::Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(na::Matrix3::identity())
    }

    /// Projects an arbitrary matrix onto SO(3) (orthogonal polar factor).
    /// Fails for non-finite input or when the nearest orthogonal matrix is a
    /// reflection that cannot be fixed meaningfully (rank < 2).
    pub fn from_matrix(m: &na::Matrix3<f64>) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NotARotation);
        }
        if orthonormality_error(m) < ORTHONORMAL_TOL && (m.determinant() - 1.0).abs() < ORTHONORMAL_TOL {
            return Ok(Self(*m));
        }
        nearest_rotation(m).map(Self).ok_or(GeometryError::NotARotation)
    }

    /// Wraps a matrix the caller guarantees to be a rotation already.
    pub fn from_matrix_unchecked(m: na::Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Hamilton quaternion in `(qx, qy, qz, qw)` order. Need not be normalized.
    pub fn from_quaternion(q: [f64; 4]) -> Result<Self, GeometryError> {
        let [x, y, z, w] = q;
        let norm = (x * x + y * y + z * z + w * w).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(GeometryError::DegenerateQuaternion);
        }
        let uq = na::UnitQuaternion::from_quaternion(na::Quaternion::new(w, x, y, z));
        Ok(Self(*uq.to_rotation_matrix().matrix()))
    }

    /// Unit quaternion `(qx, qy, qz, qw)` with `qw >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let rot = na::Rotation3::from_matrix_unchecked(self.0);
        let q = na::UnitQuaternion::from_rotation_matrix(&rot);
        let c = q.quaternion().coords; // (i, j, k, w)
        let s = if c[3] < 0.0 { -1.0 } else { 1.0 };
        [s * c[0], s * c[1], s * c[2], s * c[3]]
    }

    /// Exponential map: rotation of `|v|` radians about `v`.
    pub fn from_axis_angle(v: &Vector3) -> Self {
        Self(*na::Rotation3::new(*v).matrix())
    }

    pub fn from_axis_angle_deg(axis: &Vector3, degrees: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::from_axis_angle(&(axis / n * degrees.to_radians()))
    }

    /// Logarithm map: axis scaled by angle in radians.
    pub fn to_axis_angle(&self) -> Vector3 {
        let (v, s, c) = self.sin_cos_parts();
        if c < -0.99 {
            return na::Rotation3::from_matrix_unchecked(self.0).scaled_axis();
        }
        if s < 1e-300 {
            return Vector3::zeros();
        }
        v * (s.atan2(c) / s)
    }

    /// `sin(theta) * axis`, its norm, and `cos(theta)`.
    fn sin_cos_parts(&self) -> (Vector3, f64, f64) {
        let m = &self.0;
        let v = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5;
        let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        (v, v.norm(), c)
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let (_, s, c) = self.sin_cos_parts();
        s.atan2(c)
    }

    /// Geodesic distance to `other` in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        Rotation(self.0.transpose() * other.0).angle()
    }

    pub fn matrix(&self) -> &na::Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3) -> Vector3 {
        self.0 * v
    }

    /// Row-major nine elements.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self, GeometryError> {
        Self::from_matrix(&na::Matrix3::from_row_slice(v))
    }

    /// `self * other`, re-orthonormalized if rounding drift exceeds the tolerance.
    pub fn compose(&self, other: &Rotation) -> Self {
        let m = self.0 * other.0;
        if orthonormality_error(&m) > ORTHONORMAL_TOL {
            Self(nearest_rotation(&m).unwrap_or(m))
        } else {
            Self(m)
        }
    }
}

/// `max |R^T R - I|` over all entries.
pub fn orthonormality_error(m: &na::Matrix3<f64>) -> f64 {
    (m.transpose() * m - na::Matrix3::identity()).amax()
}

/// Orthogonal polar factor with the determinant forced to +1.
pub fn nearest_rotation(m: &na::Matrix3<f64>) -> Option<na::Matrix3<f64>> {
    let svd = na::SVD::new(*m, true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut d = na::Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    r.iter().all(|x| x.is_finite()).then_some(r)
}

/// Rigid transform: `x -> R x + t`, translation in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Rotation::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation, translation: Vector3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vector3) -> Self {
        Self { rotation: Rotation::identity(), translation: t }
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self { rotation: r, translation: Vector3::zeros() }
    }

    /// Translation in mm and `(qx, qy, qz, qw)` quaternion.
    pub fn from_tq(t: [f64; 3], q: [f64; 4]) -> Result<Self, GeometryError> {
        Ok(Self { rotation: Rotation::from_quaternion(q)?, translation: Vector3::from(t) })
    }

    pub fn to_tq(&self) -> ([f64; 3], [f64; 4]) {
        (self.translation.into(), self.rotation.to_quaternion())
    }

    /// Homogeneous product `self * other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -rt.rotate(&self.translation) }
    }

    pub fn transform_point(&self, x: &Point3) -> Point3 {
        Point3::from(self.rotation.rotate(&x.coords) + self.translation)
    }

    pub fn to_matrix(&self) -> na::Matrix4<f64> {
        let mut h = na::Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        h
    }

    pub fn from_matrix(h: &na::Matrix4<f64>) -> Result<Pose, GeometryError> {
        let r = h.fixed_view::<3, 3>(0, 0).into_owned();
        let t = h.fixed_view::<3, 1>(0, 3).into_owned();
        Ok(Pose { rotation: Rotation::from_matrix(&r)?, translation: t })
    }

    /// Rotation angle (rad) and translation distance (mm) between two poses.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        (self.rotation.angle_to(&other.rotation), (self.translation - other.translation).norm())
    }
}

/// On-disk pose encoding: translation in mm and a `(qx, qy, qz, qw)` quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseTq {
    pub t: [f64; 3],
    pub q: [f64; 4],
}

impl From<&Pose> for PoseTq {
    fn from(p: &Pose) -> Self {
        let (t, q) = p.to_tq();
        Self { t, q }
    }
}

impl TryFrom<PoseTq> for Pose {
    type Error = GeometryError;

    fn try_from(p: PoseTq) -> Result<Self, Self::Error> {
        if !p.t.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteTranslation);
        }
        Pose::from_tq(p.t, p.q)
    }
}

/// Free-function form of [`Pose::compose`].
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

/// Free-function form of [`Pose::inverse`].
pub fn invert(p: &Pose) -> Pose {
    p.inverse()
}

pub fn transform_point(p: &Pose, x: &Point3) -> Point3 {
    p.transform_point(x)
}

/// Pinhole camera matrix plus image size. `k1`, `k2` are optional radial
/// distortion coefficients applied after perspective division.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height, k1: 0.0, k2: 0.0 };
        k.validate()?;
        Ok(k)
    }

    pub fn with_distortion(mut self, k1: f64, k2: f64) -> Self {
        self.k1 = k1;
        self.k2 = k2;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2].iter().all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidIntrinsics("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be non-zero".into()));
        }
        Ok(())
    }

    pub fn matrix(&self) -> na::Matrix3<f64> {
        na::Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        [self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0]
    }

    pub fn has_distortion(&self) -> bool {
        self.k1 != 0.0 || self.k2 != 0.0
    }

    /// Pixel coordinates of a normalized image-plane point `(X/Z, Y/Z)`.
    pub fn normalized_to_pixel(&self, xn: f64, yn: f64) -> Point2 {
        let f = self.radial_factor(xn * xn + yn * yn);
        Point2::new(self.fx * xn * f + self.cx, self.fy * yn * f + self.cy)
    }

    /// Inverse of [`normalized_to_pixel`](Self::normalized_to_pixel), by
    /// fixed-point iteration when distortion is present.
    pub fn pixel_to_normalized(&self, p: &Point2) -> (f64, f64) {
        let xd = (p.x - self.cx) / self.fx;
        let yd = (p.y - self.cy) / self.fy;
        if !self.has_distortion() {
            return (xd, yd);
        }
        let (mut x, mut y) = (xd, yd);
        for _ in 0..50 {
            let f = self.radial_factor(x * x + y * y);
            let (nx, ny) = (xd / f, yd / f);
            let done = (nx - x).abs() < 1e-15 && (ny - y).abs() < 1e-15;
            x = nx;
            y = ny;
            if done {
                break;
            }
        }
        (x, y)
    }

    pub(crate) fn radial_factor(&self, r2: f64) -> f64 {
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Whether `p` lies in `[0, width) x [0, height)` extended by `margin`
    /// times the image size on every side.
    pub fn contains_with_margin(&self, p: &Point2, margin: f64) -> bool {
        let (w, h) = (self.width as f64, self.height as f64);
        p.x >= -margin * w && p.x < w * (1.0 + margin) && p.y >= -margin * h && p.y < h * (1.0 + margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel(Point2),
    Behind,
}

impl Projection {
    pub fn pixel(self) -> Option<Point2> {
        match self {
            Projection::Pixel(p) => Some(p),
            Projection::Behind => None,
        }
    }
}

/// Projects a camera-frame point.
pub fn project_camera_frame(k: &CameraIntrinsics, xc: &Point3) -> Projection {
    if !(xc.z > Z_NEAR) {
        return Projection::Behind;
    }
    Projection::Pixel(k.normalized_to_pixel(xc.x / xc.z, xc.y / xc.z))
}

/// `x = K [R|t] X`, where `cam_pose_of_point_frame` maps the point's frame
/// into the camera frame.
pub fn project(k: &CameraIntrinsics, cam_pose_of_point_frame: &Pose, x: &Point3) -> Projection {
    project_camera_frame(k, &cam_pose_of_point_frame.transform_point(x))
}

/// The 3x4 projection matrix `P = K [R|t]`.
pub fn projection_matrix(k: &CameraIntrinsics, pose: &Pose) -> na::Matrix3x4<f64> {
    let mut rt = na::Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(pose.rotation.matrix());
    rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&pose.translation);
    k.matrix() * rt
}

/// Skew-symmetric cross-product matrix.
pub fn skew(v: &Vector3) -> na::Matrix3<f64> {
    na::Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

//! Rigid-body transforms in 3D.
//!
//! Rotations are stored as 3×3 matrices and poses as (rotation, translation)
//! pairs. Tangent vectors are ordered `(ρ, φ)`: translational part first,
//! rotational part second. Perturbations are applied on the left,
//! `T ← exp(ε^∧)·T`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4x6 = SMatrix<f64, 4, 6>;

/// Below this rotation angle exp/log switch to Taylor expansions.
const SMALL_ANGLE: f64 = 1e-4;
/// Rotation angles this close to π make `log` ill-conditioned.
const NEAR_PI: f64 = 1e-6;
/// Pitch this close to ±π/2 makes the roll/yaw split ambiguous.
const GIMBAL_EPS: f64 = 1e-6;
/// Number of compositions after which a [`PoseChain`] re-orthonormalizes.
const RENORMALIZE_EVERY: usize = 100;

/// 3×3 skew-symmetric matrix such that `skew(a)·b = a × b`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// A proper rotation matrix.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rotation({:?})", self.0.as_slice())
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Wraps a matrix that is already orthonormal with determinant +1.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    /// Projects an arbitrary matrix onto SO(3) (polar decomposition).
    pub fn from_matrix_projected(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut d = Mat3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self(u * d * v_t)
    }

    /// Rodrigues' formula for a rotation vector `φ = θ·a`.
    pub fn exp(phi: &Vec3) -> Self {
        let theta2 = phi.norm_squared();
        let theta = theta2.sqrt();
        let (a, b) = if theta < SMALL_ANGLE {
            (
                1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
                0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
            )
        } else {
            let half = (0.5 * theta).sin();
            (theta.sin() / theta, 2.0 * half * half / theta2)
        };
        let k = skew(phi);
        Self(Mat3::identity() + k * a + k * k * b)
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis * (angle / n)))
    }

    pub fn rx(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::x(), angle)
    }

    pub fn ry(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::y(), angle)
    }

    pub fn rz(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), angle)
    }

    /// Builds `Rz(yaw)·Ry(pitch)·Rx(roll)`.
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::rz(yaw) * Self::ry(pitch) * Self::rx(roll)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let c = ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let s = vee(&(self.0 - self.0.transpose())).norm() * 0.5;
        s.atan2(c)
    }

    /// Rotation vector `φ` with `exp(φ) = self`.
    pub fn log(&self) -> Result<Vec3, GeometryError> {
        let theta = self.angle();
        if theta > std::f64::consts::PI - NEAR_PI {
            return Err(GeometryError::AngleNearPi { angle: theta });
        }
        let w = vee(&(self.0 - self.0.transpose()));
        if theta < SMALL_ANGLE {
            let t2 = theta * theta;
            return Ok(w * (0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0));
        }
        if theta < 3.0 {
            return Ok(w * (theta / (2.0 * theta.sin())));
        }
        // Close to π the antisymmetric part vanishes; read the axis from the
        // symmetric part instead and take its sign from `w`.
        let c = theta.cos();
        let sym = (self.0 + self.0.transpose() - Mat3::identity() * (2.0 * c)) / (2.0 * (1.0 - c));
        let i = (0..3)
            .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
            .unwrap_or(0);
        let mut axis = sym.column(i).into_owned();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        Ok(axis * theta)
    }

    /// Orthonormality defect `‖R·Rᵀ − I‖` and determinant error.
    pub fn defect(&self) -> (f64, f64) {
        (
            (self.0 * self.0.transpose() - Mat3::identity()).norm(),
            (self.0.determinant() - 1.0).abs(),
        )
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Tangent vector `ε = (ρ, φ)` of SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn new(rho: Vec3, phi: Vec3) -> Self {
        Self(Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z))
    }

    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    pub fn rho(&self) -> Vec3 {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn phi(&self) -> Vec3 {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// Coefficients `(A, B, C)` of `sinθ/θ`, `(1−cosθ)/θ²`, `(θ−sinθ)/θ³`.
fn exp_coefficients(theta2: f64) -> (f64, f64, f64) {
    let theta = theta2.sqrt();
    if theta < SMALL_ANGLE {
        let t4 = theta2 * theta2;
        (
            1.0 - theta2 / 6.0 + t4 / 120.0,
            0.5 - theta2 / 24.0 + t4 / 720.0,
            1.0 / 6.0 - theta2 / 120.0 + t4 / 5040.0,
        )
    } else {
        let half = (0.5 * theta).sin();
        (
            theta.sin() / theta,
            2.0 * half * half / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    }
}

/// Rigid transform `p ↦ R·p + t`.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pose({:?})", self.to_row_major())
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self::new(r, Vec3::zeros())
    }

    /// `self·other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -rt.rotate(&self.translation),
        }
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Pose {
        Pose::new(
            Rotation::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into_owned()),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Top three rows of the homogeneous matrix, row-major.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = self.rotation.matrix();
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    /// Inverse of [`Pose::to_row_major`]; the rotation block is projected
    /// onto SO(3) to absorb rounding from text formats.
    pub fn from_row_major(v: &[f64; 12]) -> Pose {
        let r = Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Pose::new(
            Rotation::from_matrix_projected(&r),
            Vec3::new(v[3], v[7], v[11]),
        )
    }

    /// Closed-form exponential map.
    pub fn exp(xi: &Twist) -> Pose {
        let phi = xi.phi();
        let rho = xi.rho();
        let (_, b, c) = exp_coefficients(phi.norm_squared());
        let k = skew(&phi);
        let left_jacobian = Mat3::identity() + k * b + k * k * c;
        Pose::new(Rotation::exp(&phi), left_jacobian * rho)
    }

    /// Logarithm map; fails when the rotation angle is within 1e-6 of π.
    pub fn log(&self) -> Result<Twist, GeometryError> {
        let phi = self.rotation.log()?;
        let theta2 = phi.norm_squared();
        let k = skew(&phi);
        let d = if theta2.sqrt() < SMALL_ANGLE {
            1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
        } else {
            let half = 0.5 * theta2.sqrt();
            (1.0 - half / half.tan()) / theta2
        };
        let inv_left_jacobian = Mat3::identity() - k * 0.5 + k * k * d;
        Ok(Twist::new(inv_left_jacobian * self.translation, phi))
    }

    /// Relative motion `self·other⁻¹`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.compose(&other.inverse())
    }

    /// Re-projects the rotation block onto SO(3).
    pub fn renormalized(&self) -> Pose {
        Pose::new(
            Rotation::from_matrix_projected(self.rotation.matrix()),
            self.translation,
        )
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Accumulates left-multiplied steps, re-orthonormalizing periodically.
#[derive(Clone, Debug)]
pub struct PoseChain {
    current: Pose,
    since_normalize: usize,
}

impl PoseChain {
    pub fn new(start: Pose) -> Self {
        Self {
            current: start,
            since_normalize: 0,
        }
    }

    /// `current ← step·current`.
    pub fn push(&mut self, step: &Pose) -> Pose {
        self.current = step.compose(&self.current);
        self.since_normalize += 1;
        if self.since_normalize >= RENORMALIZE_EVERY {
            self.current = self.current.renormalized();
            self.since_normalize = 0;
        }
        self.current
    }

    pub fn current(&self) -> Pose {
        self.current
    }
}

/// `h^⊙` for a homogeneous point `h = (u, η)`: `[η·I, −u^∧; 0ᵀ, 0ᵀ]`.
///
/// Satisfies `exp(ε^∧)·h ≈ h + h^⊙·ε` to first order.
pub fn circle_dot(h: &Vector4<f64>) -> Mat4x6 {
    let u = Vec3::new(h.x, h.y, h.z);
    let mut m = Mat4x6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Mat3::identity() * h.w));
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&u)));
    m
}

/// Roll-pitch-yaw (ZYX) angles of `R = Rz(yaw)·Ry(pitch)·Rx(roll)`.
pub fn rpy(r: &Rotation) -> Result<Vec3, GeometryError> {
    let m = r.matrix();
    let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    if (pitch.abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_EPS {
        return Err(GeometryError::GimbalLock { pitch });
    }
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    Ok(Vec3::new(roll, pitch, yaw))
}

/// Roll-pitch-yaw decomposition of `truthᵀ·estimate`, in radians.
pub fn rpy_error(estimate: &Rotation, truth: &Rotation) -> Result<Vec3, GeometryError> {
    rpy(&(truth.transpose() * *estimate))
}

/// Row-major 12-number pose encoding used in every file format.
pub mod serde_pose {
    use super::Pose;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(pose: &Pose, s: S) -> Result<S::Ok, S::Error> {
        pose.to_row_major().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Pose, D::Error> {
        let v = <[f64; 12]>::deserialize(d)?;
        Ok(Pose::from_row_major(&v))
    }
}

/// Row-major encoding for `Vec<Option<Pose>>` (null for gaps).
pub mod serde_pose_seq {
    use super::Pose;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(poses: &[Option<Pose>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Option<[f64; 12]>> = poses.iter().map(|p| p.map(|p| p.to_row_major())).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<Pose>>, D::Error> {
        let rows = Vec::<Option<[f64; 12]>>::deserialize(d)?;
        Ok(rows
            .into_iter()
            .map(|r| r.map(|r| Pose::from_row_major(&r)))
            .collect())
    }
}

/// Serializable wrapper when a bare pose needs its own type.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PoseRecord(#[serde(with = "serde_pose")] pub Pose);

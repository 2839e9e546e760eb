//! Rectified pinhole stereo sensor in `(u, v, d)` space.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{CameraError, ConfigError};
use crate::se3::Vec3;

/// Points closer than this to the image plane cannot be projected.
pub const MIN_PROJECT_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StereoIntrinsics {
    pub f_u: f64,
    pub f_v: f64,
    pub c_u: f64,
    pub c_v: f64,
    /// Baseline in meters.
    pub b: f64,
    pub width: f64,
    pub height: f64,
    #[serde(default = "default_z_near")]
    pub z_near: f64,
}

fn default_z_near() -> f64 {
    0.1
}

impl Default for StereoIntrinsics {
    fn default() -> Self {
        Self {
            f_u: 400.0,
            f_v: 400.0,
            c_u: 320.0,
            c_v: 240.0,
            b: 0.24,
            width: 640.0,
            height: 480.0,
            z_near: default_z_near(),
        }
    }
}

/// Left-image pixel coordinates plus disparity `u_left − u_right`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StereoObservation {
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

impl StereoObservation {
    pub fn new(u: f64, v: f64, d: f64) -> Self {
        Self { u, v, d }
    }

    pub fn as_vector(&self) -> Vec3 {
        Vec3::new(self.u, self.v, self.d)
    }

    pub fn from_vector(v: &Vec3) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    /// Image-plane distance, ignoring disparity.
    pub fn image_distance(&self, other: &StereoObservation) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

impl StereoIntrinsics {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("intrinsics.f_u", self.f_u),
            ("intrinsics.f_v", self.f_v),
            ("intrinsics.b", self.b),
            ("intrinsics.width", self.width),
            ("intrinsics.height", self.height),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::new(field, format!("must be positive, got {value}")));
            }
        }
        if !(self.z_near.is_finite() && self.z_near >= 0.0) {
            return Err(ConfigError::new("intrinsics.z_near", "must be non-negative"));
        }
        Ok(())
    }

    pub fn project(&self, p: &Vec3) -> Result<StereoObservation, CameraError> {
        if p.z <= MIN_PROJECT_DEPTH {
            return Err(CameraError::BehindCamera { z: p.z });
        }
        let inv_z = 1.0 / p.z;
        Ok(StereoObservation {
            u: self.f_u * p.x * inv_z + self.c_u,
            v: self.f_v * p.y * inv_z + self.c_v,
            d: self.f_u * self.b * inv_z,
        })
    }

    pub fn backproject(
        &self,
        obs: &StereoObservation,
        min_disparity: f64,
    ) -> Result<Vec3, CameraError> {
        if !(obs.d > min_disparity) {
            return Err(CameraError::DisparityTooSmall {
                disparity: obs.d,
                min: min_disparity,
            });
        }
        let z = self.f_u * self.b / obs.d;
        Ok(Vec3::new(
            (obs.u - self.c_u) * z / self.f_u,
            (obs.v - self.c_v) * z / self.f_v,
            z,
        ))
    }

    /// `∂(u, v, d)/∂(x, y, z)` at `p`.
    pub fn projection_jacobian(&self, p: &Vec3) -> Matrix3<f64> {
        let inv_z = 1.0 / p.z;
        let inv_z2 = inv_z * inv_z;
        Matrix3::new(
            self.f_u * inv_z,
            0.0,
            -self.f_u * p.x * inv_z2,
            0.0,
            self.f_v * inv_z,
            -self.f_v * p.y * inv_z2,
            0.0,
            0.0,
            -self.f_u * self.b * inv_z2,
        )
    }

    /// True iff `p` is beyond `z_near` and lands inside both images
    /// (half-open bounds `[0, width) × [0, height)`).
    pub fn in_frustum(&self, p: &Vec3) -> bool {
        if !(p.z > self.z_near) {
            return false;
        }
        let Ok(obs) = self.project(p) else {
            return false;
        };
        let inside = |u: f64| (0.0..self.width).contains(&u);
        inside(obs.u) && inside(obs.u - obs.d) && (0.0..self.height).contains(&obs.v)
    }

    /// Depth at which disparity equals `d`.
    pub fn depth_for_disparity(&self, d: f64) -> f64 {
        self.f_u * self.b / d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k() -> StereoIntrinsics {
        StereoIntrinsics::default()
    }

    #[test]
    fn project_examples() {
        let k = k();
        let o = k.project(&Vec3::new(0.0, 0.0, 3.0)).unwrap();
        assert_eq!((o.u, o.v), (k.c_u, k.c_v));
        assert_relative_eq!(o.d, k.f_u * k.b / 3.0);
        let o = k.project(&Vec3::new(1.0, 0.0, 4.0)).unwrap();
        assert_relative_eq!(o.u, 420.0, epsilon = 1e-12);
        assert_relative_eq!(o.v, 240.0, epsilon = 1e-12);
        assert_relative_eq!(o.d, 24.0, epsilon = 1e-12);
        assert!(matches!(
            k.project(&Vec3::new(0.0, 0.0, 1e-7)),
            Err(CameraError::BehindCamera { .. })
        ));
    }

    #[test]
    fn backproject_examples() {
        let k = k();
        let p = k
            .backproject(&StereoObservation::new(k.c_u, k.c_v, k.f_u * k.b), 0.5)
            .unwrap();
        assert_relative_eq!(p, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        let p = k.backproject(&StereoObservation::new(420.0, 240.0, 24.0), 0.5).unwrap();
        assert_relative_eq!(p, Vec3::new(1.0, 0.0, 4.0), epsilon = 1e-12);
        assert!(matches!(
            k.backproject(&StereoObservation::new(1.0, 1.0, 0.5), 0.5),
            Err(CameraError::DisparityTooSmall { .. })
        ));
    }

    #[test]
    fn jacobian_on_axis() {
        let k = k();
        let j = k.projection_jacobian(&Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(j[(0, 0)], k.f_u);
        assert_eq!(j[(1, 1)], k.f_v);
        assert_eq!(j[(2, 2)], -k.f_u * k.b);
        assert_eq!(j[(0, 1)], 0.0);
    }

    #[test]
    fn frustum_examples() {
        let k = k();
        assert!(k.in_frustum(&Vec3::new(0.0, 0.0, 2.0)));
        assert!(!k.in_frustum(&Vec3::new(0.0, 0.0, -1.0)));
        // u = width exactly: x = (width - c_u)·z / f_u.
        let z = 2.0;
        let edge = Vec3::new((k.width - k.c_u) * z / k.f_u, 0.0, z);
        assert!(!k.in_frustum(&edge));
        let inside = Vec3::new((k.width - 1e-6 - k.c_u) * z / k.f_u, 0.0, z);
        assert!(k.in_frustum(&inside));
        // The right image is shifted left by the disparity.
        let left_edge = Vec3::new((0.5 - k.c_u) * z / k.f_u, 0.0, z);
        assert!(!k.in_frustum(&left_edge));
    }
}

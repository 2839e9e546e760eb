//! Scripted rigid motions: pendulum swings, constant-rate rotations, and
//! camera orbits. Every script yields object-to-world poses, one per frame,
//! with frame 0 first.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::se3::{Mat3, Pose, Rotation, Vec3};

fn zero3() -> [f64; 3] {
    [0.0; 3]
}

fn unit_z() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn unit_x() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

/// A motion archetype and its parameters. Angles are radians, rates are
/// per frame, lengths are meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum MotionScript {
    /// Fixed pose. With `look_at`, the pose is a camera frame (z forward,
    /// y down) at `position` aimed at that point.
    Static {
        #[serde(default = "zero3")]
        position: [f64; 3],
        #[serde(default)]
        yaw: f64,
        #[serde(default)]
        look_at: Option<[f64; 3]>,
    },
    /// Pendulum hanging `length` below `pivot`, swinging about `axis` with
    /// angle `amplitude·sin(2π·k/period + phase)`, optionally spinning
    /// about its own vertical axis at `spin` per frame.
    Swing {
        pivot: [f64; 3],
        #[serde(default = "unit_x")]
        axis: [f64; 3],
        length: f64,
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        spin: f64,
    },
    /// Constant angular velocity `rate` about `axis` through the body
    /// origin, which starts at `center` and drifts by `velocity` per frame.
    Rotate {
        center: [f64; 3],
        #[serde(default = "unit_z")]
        axis: [f64; 3],
        rate: f64,
        #[serde(default = "zero3")]
        velocity: [f64; 3],
    },
    /// Camera circling `center` at `radius` and `height` above it, always
    /// looking at `center`.
    Orbit {
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        height: f64,
        #[serde(default)]
        start_angle: f64,
        rate: f64,
    },
}

fn v3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// Camera-to-world pose at `eye` looking at `target` with world z up.
pub fn look_at(eye: &Vec3, target: &Vec3) -> Pose {
    let forward = (target - eye).normalize();
    let up = Vec3::z();
    let mut down = -up + forward * up.dot(&forward);
    if down.norm() < 1e-9 {
        down = Vec3::x();
    }
    let down = down.normalize();
    let right = down.cross(&forward);
    let r = Mat3::from_columns(&[right, down, forward]);
    Pose::new(Rotation::from_matrix_unchecked(r), *eye)
}

impl MotionScript {
    pub fn validate(&self, field: &str) -> Result<(), ConfigError> {
        let bad = |name: &str, msg: &str| Err(ConfigError::new(format!("{field}.params.{name}"), msg));
        match self {
            MotionScript::Static { look_at: Some(t), position, .. } => {
                if v3(t) == v3(position) {
                    return bad("look_at", "must differ from position");
                }
            }
            MotionScript::Static { .. } => {}
            MotionScript::Swing {
                axis,
                length,
                period,
                ..
            } => {
                if !(*period > 0.0) {
                    return bad("period", "must be positive");
                }
                if !(*length >= 0.0) {
                    return bad("length", "must be non-negative");
                }
                if v3(axis).norm() == 0.0 {
                    return bad("axis", "must be non-zero");
                }
            }
            MotionScript::Rotate { axis, rate, .. } => {
                if *rate != 0.0 && v3(axis).norm() == 0.0 {
                    return bad("axis", "must be non-zero");
                }
            }
            MotionScript::Orbit { radius, .. } => {
                if !(*radius > 0.0) {
                    return bad("radius", "must be positive");
                }
            }
        }
        Ok(())
    }

    /// Pose at frame `k`.
    pub fn pose_at(&self, k: usize) -> Pose {
        let kf = k as f64;
        match self {
            MotionScript::Static {
                position,
                yaw,
                look_at: target,
            } => match target {
                Some(t) => look_at(&v3(position), &v3(t)),
                None => Pose::new(Rotation::rz(*yaw), v3(position)),
            },
            MotionScript::Swing {
                pivot,
                axis,
                length,
                amplitude,
                period,
                phase,
                spin,
            } => {
                let theta = amplitude * (TAU * kf / period + phase).sin();
                Pose::from_translation(v3(pivot))
                    * Pose::from_rotation(Rotation::from_axis_angle(&v3(axis), theta))
                    * Pose::from_translation(Vec3::new(0.0, 0.0, -length))
                    * Pose::from_rotation(Rotation::rz(spin * kf))
            }
            MotionScript::Rotate {
                center,
                axis,
                rate,
                velocity,
            } => Pose::new(
                Rotation::from_axis_angle(&v3(axis), rate * kf),
                v3(center) + v3(velocity) * kf,
            ),
            MotionScript::Orbit {
                center,
                radius,
                height,
                start_angle,
                rate,
            } => {
                let a = start_angle + rate * kf;
                let c = v3(center);
                let eye = c + Vec3::new(radius * a.cos(), radius * a.sin(), *height);
                look_at(&eye, &c)
            }
        }
    }
}

/// Per-frame object-to-world poses for frames `0..frames`.
pub fn scripted_motions(script: &MotionScript, frames: usize) -> Vec<Pose> {
    (0..frames).map(|k| script.pose_at(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn max_diff(a: &Pose, b: &Pose) -> f64 {
        (a.to_homogeneous() - b.to_homogeneous()).abs().max()
    }

    #[test]
    fn zero_rate_rotation_is_constant() {
        let s = MotionScript::Rotate {
            center: [1.0, 2.0, 3.0],
            axis: [0.0, 0.0, 1.0],
            rate: 0.0,
            velocity: [0.0; 3],
        };
        let poses = scripted_motions(&s, 10);
        assert!(poses.iter().all(|p| max_diff(p, &poses[0]) == 0.0));
    }

    #[test]
    fn rotation_integrates_to_half_turn() {
        let k = 48;
        let s = MotionScript::Rotate {
            center: [0.0; 3],
            axis: [0.0, 0.0, 1.0],
            rate: PI / k as f64,
            velocity: [0.0; 3],
        };
        let poses = scripted_motions(&s, k + 1);
        let expected = Pose::from_rotation(Rotation::rz(PI));
        assert!(max_diff(&poses[k], &expected) < 1e-12);
    }

    #[test]
    fn zero_amplitude_swing_is_constant() {
        let s = MotionScript::Swing {
            pivot: [0.0, 0.0, 2.0],
            axis: [1.0, 0.0, 0.0],
            length: 0.5,
            amplitude: 0.0,
            period: 12.0,
            phase: 0.3,
            spin: 0.0,
        };
        let poses = scripted_motions(&s, 20);
        assert!(poses.iter().all(|p| max_diff(p, &poses[0]) < 1e-15));
        assert!((poses[0].translation - Vec3::new(0.0, 0.0, 1.5)).norm() < 1e-15);
    }

    #[test]
    fn orbit_looks_at_center() {
        let s = MotionScript::Orbit {
            center: [0.5, -0.2, 0.3],
            radius: 2.0,
            height: 0.4,
            start_angle: 2.0,
            rate: 0.05,
        };
        for pose in scripted_motions(&s, 30) {
            let world_to_cam = pose.inverse();
            let c = world_to_cam.transform(&Vec3::new(0.5, -0.2, 0.3));
            assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12 && c.z > 0.0);
            let (orth, det) = pose.rotation.defect();
            assert!(orth < 1e-12 && det < 1e-12);
        }
    }

    #[test]
    fn serde_shape_is_kind_and_params() {
        let s = MotionScript::Rotate {
            center: [0.0; 3],
            axis: [0.0, 0.0, 1.0],
            rate: 0.1,
            velocity: [0.0; 3],
        };
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["kind"], "rotate");
        assert_eq!(v["params"]["rate"], 0.1);
        let back: MotionScript = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }
}

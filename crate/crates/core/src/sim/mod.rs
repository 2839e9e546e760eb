//! Synthetic multimotion scenes with full ground truth.
//!
//! A scene is a static background (body 0), zero or more moving boxes, and a
//! moving stereo camera. Box surfaces are sampled uniformly; a sample is
//! observed whenever it lies inside the stereo frustum and survives the
//! per-frame dropout draw. Observations carry Gaussian noise in `(u, v, d)`.

pub mod motion;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{StereoIntrinsics, StereoObservation};
use crate::error::ConfigError;
use crate::se3::{Pose, Vec3};
use crate::tracklet::{FrameObservation, Tracklet, TrackletId};

pub use motion::{look_at, scripted_motions, MotionScript};

pub type BodyId = usize;

/// Body id of the static background.
pub const BACKGROUND: BodyId = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyConfig {
    #[serde(flatten)]
    pub motion: MotionScript,
    pub n_points: usize,
    /// Box side lengths in meters.
    pub extent: [f64; 3],
}

fn default_min_disparity() -> f64 {
    0.5
}

fn default_gap_limit() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub frames: usize,
    pub intrinsics: StereoIntrinsics,
    pub camera: MotionScript,
    /// Body 0 is the static background.
    pub bodies: Vec<BodyConfig>,
    /// Pixel noise standard deviation applied to u, v and d.
    pub noise_sigma: f64,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_gap_limit")]
    pub gap_limit: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_min_disparity")]
    pub min_disparity: f64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.intrinsics.validate()?;
        if self.frames < 2 {
            return Err(ConfigError::new("frames", "at least 2 frames are required"));
        }
        if self.bodies.is_empty() {
            return Err(ConfigError::new("bodies", "the static background body is required"));
        }
        if !matches!(self.bodies[0].motion, MotionScript::Static { .. }) {
            return Err(ConfigError::new("bodies[0].kind", "body 0 is the background and must be static"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(ConfigError::new("noise_sigma", "must be a finite non-negative number"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::new("dropout", "must be in [0, 1)"));
        }
        if self.gap_limit == 0 {
            return Err(ConfigError::new("gap_limit", "must be at least 1"));
        }
        if !(self.min_disparity > 0.0) {
            return Err(ConfigError::new("min_disparity", "must be positive"));
        }
        self.camera.validate("camera")?;
        for (i, b) in self.bodies.iter().enumerate() {
            b.motion.validate(&format!("bodies[{i}]"))?;
            if b.n_points == 0 {
                return Err(ConfigError::new(format!("bodies[{i}].n_points"), "must be positive"));
            }
            if b.extent.iter().any(|e| !(*e >= 0.0)) || b.extent.iter().all(|e| *e == 0.0) {
                return Err(ConfigError::new(
                    format!("bodies[{i}].extent"),
                    "side lengths must be non-negative and not all zero",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidBody {
    pub id: BodyId,
    /// Surface samples in the body frame.
    #[serde(skip)]
    pub points: Vec<Vec3>,
    /// Body-to-world pose per frame.
    #[serde(with = "pose_vec")]
    pub trajectory: Vec<Pose>,
}

/// Everything the simulator knows and the pipeline must not see.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub frames: usize,
    /// World-to-camera pose per frame.
    #[serde(with = "pose_vec")]
    pub camera: Vec<Pose>,
    pub bodies: Vec<RigidBody>,
    pub assignment: BTreeMap<TrackletId, BodyId>,
}

mod pose_vec {
    use super::Pose;
    use crate::se3::PoseRecord;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(poses: &[Pose], s: S) -> Result<S::Ok, S::Error> {
        poses.iter().map(|p| PoseRecord(*p)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Pose>, D::Error> {
        Ok(Vec::<PoseRecord>::deserialize(d)?.into_iter().map(|r| r.0).collect())
    }
}

impl SceneTruth {
    /// Camera motion `T_{C_k C_ref}`.
    pub fn camera_motion(&self, k: usize, reference: usize) -> Pose {
        self.camera[k].compose(&self.camera[reference].inverse())
    }

    /// The camera egomotion that would explain body `body`'s points if the
    /// body were static: `T_{C_k W}·T_{W B_k}·T_{W B_ref}⁻¹·T_{C_ref W}⁻¹`.
    pub fn hypothesis(&self, body: BodyId, k: usize, reference: usize) -> Pose {
        let traj = &self.bodies[body].trajectory;
        self.camera[k]
            * traj[k]
            * traj[reference].inverse()
            * self.camera[reference].inverse()
    }

    /// Body that generated a tracklet.
    pub fn body_of(&self, id: TrackletId) -> Option<BodyId> {
        self.assignment.get(&id).copied()
    }

    /// Restricts every per-frame sequence to `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> SceneTruth {
        let end = (start + len).min(self.frames);
        SceneTruth {
            frames: end - start,
            camera: self.camera[start..end].to_vec(),
            bodies: self
                .bodies
                .iter()
                .map(|b| RigidBody {
                    id: b.id,
                    points: b.points.clone(),
                    trajectory: b.trajectory[start..end].to_vec(),
                })
                .collect(),
            assignment: self.assignment.clone(),
        }
    }
}

/// Uniform samples on the surface of an axis-aligned box centered at the
/// origin. Degenerate (zero-thickness) sides collapse to a rectangle.
fn sample_box_surface<R: Rng>(rng: &mut R, extent: &[f64; 3], n: usize) -> Vec<Vec3> {
    let [ex, ey, ez] = *extent;
    // (normal axis, area) for the three face pairs.
    let faces = [(0usize, ey * ez), (1, ex * ez), (2, ex * ey)];
    let total: f64 = faces.iter().map(|f| 2.0 * f.1).sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.gen::<f64>() * total;
            let mut axis = 2;
            for &(a, area) in &faces {
                if pick < 2.0 * area {
                    axis = a;
                    break;
                }
                pick -= 2.0 * area;
            }
            let side = if rng.gen::<bool>() { 0.5 } else { -0.5 };
            let mut p = Vec3::new(
                (rng.gen::<f64>() - 0.5) * ex,
                (rng.gen::<f64>() - 0.5) * ey,
                (rng.gen::<f64>() - 0.5) * ez,
            );
            p[axis] = side * extent[axis];
            p
        })
        .collect()
}

struct Segment {
    body: BodyId,
    first_frame: usize,
    obs: Vec<Option<FrameObservation>>,
}

/// Generates tracklets and ground truth. Deterministic in `(config, seed)`.
pub fn generate_scene(
    config: &SceneConfig,
    seed: u64,
) -> Result<(Vec<Tracklet>, SceneTruth), ConfigError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_frames = config.frames;
    let cam = &config.intrinsics;

    let camera: Vec<Pose> = scripted_motions(&config.camera, k_frames)
        .into_iter()
        .map(|p| p.inverse())
        .collect();
    let bodies: Vec<RigidBody> = config
        .bodies
        .iter()
        .enumerate()
        .map(|(id, b)| RigidBody {
            id,
            points: sample_box_surface(&mut rng, &b.extent, b.n_points),
            trajectory: scripted_motions(&b.motion, k_frames),
        })
        .collect();

    let noise = (config.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, config.noise_sigma).expect("finite sigma"));

    let mut segments: Vec<Segment> = Vec::new();
    for body in &bodies {
        let to_camera: Vec<Pose> = (0..k_frames)
            .map(|k| camera[k] * body.trajectory[k])
            .collect();
        for x in &body.points {
            let mut current: Option<Segment> = None;
            let mut missed = 0usize;
            for (k, pose) in to_camera.iter().enumerate() {
                let p = pose.transform(x);
                let dropped = rng.gen::<f64>() < config.dropout;
                let observation = if cam.in_frustum(&p) && !dropped {
                    let clean = cam.project(&p).expect("in frustum");
                    let stereo = match &noise {
                        Some(n) => StereoObservation::new(
                            clean.u + n.sample(&mut rng),
                            clean.v + n.sample(&mut rng),
                            clean.d + n.sample(&mut rng),
                        ),
                        None => clean,
                    };
                    cam.backproject(&stereo, config.min_disparity)
                        .ok()
                        .filter(|q| cam.in_frustum(q))
                        .map(|point| FrameObservation { stereo, point })
                } else {
                    None
                };
                match (observation, current.as_mut()) {
                    (Some(o), Some(seg)) => {
                        seg.obs.extend(std::iter::repeat(None).take(missed));
                        seg.obs.push(Some(o));
                        missed = 0;
                    }
                    (Some(o), None) => {
                        current = Some(Segment {
                            body: body.id,
                            first_frame: k,
                            obs: vec![Some(o)],
                        });
                        missed = 0;
                    }
                    (None, Some(_)) => {
                        missed += 1;
                        if missed >= config.gap_limit {
                            segments.extend(current.take());
                            missed = 0;
                        }
                    }
                    (None, None) => {}
                }
            }
            segments.extend(current.take());
        }
    }

    // A track needs two consecutive observations to say anything about
    // motion.
    segments.retain(|s| s.obs.windows(2).any(|w| w[0].is_some() && w[1].is_some()));
    // Ids carry no information about the generating body.
    segments.shuffle(&mut rng);
    let mut assignment = BTreeMap::new();
    let mut tracklets = Vec::with_capacity(segments.len());
    for (i, seg) in segments.into_iter().enumerate() {
        let id = i as TrackletId;
        if let Some(t) = Tracklet::new(id, seg.first_frame, seg.obs) {
            assignment.insert(id, seg.body);
            tracklets.push(t);
        }
    }
    tracklets.sort_by_key(|t| t.id);

    let truth = SceneTruth {
        frames: k_frames,
        camera,
        bodies,
        assignment,
    };
    Ok((tracklets, truth))
}

/// Ready-made scene configurations.
pub mod presets {
    use super::*;

    fn background(n_points: usize) -> BodyConfig {
        BodyConfig {
            motion: MotionScript::Static {
                position: [1.8, 0.0, 0.5],
                yaw: 0.0,
                look_at: None,
            },
            n_points,
            extent: [0.1, 7.0, 5.0],
        }
    }

    fn orbit_camera() -> MotionScript {
        MotionScript::Orbit {
            center: [0.0, 0.0, 0.35],
            radius: 2.3,
            height: 0.45,
            start_angle: std::f64::consts::PI - 0.3,
            rate: 0.6 / 47.0,
        }
    }

    /// Moving camera observing four moving blocks in front of a static
    /// wall: two swinging, one swinging while spinning, one spinning in place.
    pub fn desk() -> SceneConfig {
        let block = 90;
        SceneConfig {
            frames: 48,
            intrinsics: StereoIntrinsics::default(),
            camera: orbit_camera(),
            bodies: vec![
                background(260),
                // Top left (image left is world +y when looking along +x).
                BodyConfig {
                    motion: MotionScript::Swing {
                        pivot: [0.0, 0.7, 1.45],
                        axis: [1.0, 0.0, 0.0],
                        length: 0.55,
                        amplitude: 0.55,
                        period: 18.0,
                        phase: 0.0,
                        spin: 0.0,
                    },
                    n_points: block,
                    extent: [0.35, 0.35, 0.35],
                },
                // Top right: swinging and spinning.
                BodyConfig {
                    motion: MotionScript::Swing {
                        pivot: [0.0, -0.7, 1.45],
                        axis: [1.0, 0.6, 0.0],
                        length: 0.55,
                        amplitude: 0.5,
                        period: 22.0,
                        phase: 1.3,
                        spin: 0.2,
                    },
                    n_points: block,
                    extent: [0.35, 0.35, 0.35],
                },
                // Bottom left: swinging.
                BodyConfig {
                    motion: MotionScript::Swing {
                        pivot: [0.0, 0.75, 0.45],
                        axis: [1.0, -0.4, 0.0],
                        length: 0.5,
                        amplitude: 0.6,
                        period: 16.0,
                        phase: 2.4,
                        spin: 0.0,
                    },
                    n_points: block,
                    extent: [0.35, 0.35, 0.35],
                },
                // Bottom right: spinning in place, roughly about the line
                // of sight.
                BodyConfig {
                    motion: MotionScript::Rotate {
                        center: [0.0, -0.75, -0.05],
                        axis: [1.0, 0.1, 0.15],
                        rate: 0.35,
                        velocity: [0.0; 3],
                    },
                    n_points: block,
                    extent: [0.4, 0.4, 0.4],
                },
            ],
            noise_sigma: 0.5,
            dropout: 0.1,
            gap_limit: 2,
            seed: 1,
            min_disparity: 0.5,
        }
    }

    /// Same scene without noise or dropout.
    pub fn desk_noise_free() -> SceneConfig {
        SceneConfig {
            noise_sigma: 0.0,
            dropout: 0.0,
            ..desk()
        }
    }

    /// Background plus two blocks; the second slides sideways out of the
    /// frustum halfway through the window.
    pub fn frustum_exit() -> SceneConfig {
        let base = desk();
        SceneConfig {
            bodies: vec![
                base.bodies[0].clone(),
                base.bodies[1].clone(),
                BodyConfig {
                    motion: MotionScript::Rotate {
                        center: [0.0, -0.4, 0.0],
                        axis: [1.0, 0.1, 0.15],
                        rate: 0.15,
                        velocity: [0.0, -0.1, 0.0],
                    },
                    n_points: 120,
                    extent: [0.4, 0.4, 0.4],
                },
            ],
            dropout: 0.0,
            ..base
        }
    }

    /// Static camera looking at a static background.
    pub fn static_scene() -> SceneConfig {
        SceneConfig {
            frames: 8,
            intrinsics: StereoIntrinsics::default(),
            camera: MotionScript::Static {
                position: [-2.3, 0.0, 0.8],
                yaw: 0.0,
                look_at: Some([0.0, 0.0, 0.35]),
            },
            bodies: vec![background(150)],
            noise_sigma: 0.0,
            dropout: 0.0,
            gap_limit: 2,
            seed: 1,
            min_disparity: 0.5,
        }
    }
}

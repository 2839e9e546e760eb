//! Scoring window dumps against simulator truth: calibration, label-to-body
//! association, per-frame errors, drift, model counts and coverage.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::labeling::rigid::align;
use crate::labeling::LabelId;
use crate::pipeline::{window_tracklets, Method, WindowDump};
use crate::se3::{rpy_error, Pose, Vec3};
use crate::sim::{BodyId, SceneTruth};
use crate::tracklet::Tracklet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub calibration_frames: usize,
    /// Bodies with fewer tracklets in a window do not count as motions.
    pub min_support_points: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            calibration_frames: 25,
            min_support_points: 10,
        }
    }
}

/// Origin and unit-axis tips of frame `k` expressed in the reference frame,
/// for a trajectory pose `T_{k,1}`.
fn pose_points(t: &Pose) -> [Vec3; 4] {
    let p = t.inverse();
    [
        p.translation,
        p.transform(&Vec3::x()),
        p.transform(&Vec3::y()),
        p.transform(&Vec3::z()),
    ]
}

/// Rigid transform `G` that best maps estimated frame poses onto true ones
/// (`T_{k,1}⁻¹ ↦ G·T_{k,1}⁻¹`) over the first `n_frames` frames where both
/// are present. Each frame contributes its origin and unit-axis tips, so a
/// trajectory that only rotates still fixes `G`.
pub fn calibrate_frames(
    estimated: &[Option<Pose>],
    truth: &[Option<Pose>],
    n_frames: usize,
) -> Result<Pose, EvalError> {
    let shared: Vec<(Pose, Pose)> = estimated
        .iter()
        .zip(truth)
        .filter_map(|(e, t)| Some(((*e)?, (*t)?)))
        .take(n_frames)
        .collect();
    if shared.len() < n_frames || shared.is_empty() {
        return Err(EvalError::InsufficientOverlap {
            needed: n_frames,
            available: shared.len(),
        });
    }
    let mut src = Vec::with_capacity(4 * shared.len());
    let mut dst = Vec::with_capacity(4 * shared.len());
    for (e, t) in &shared {
        src.extend(pose_points(e));
        dst.extend(pose_points(t));
    }
    Ok(align(&src, &dst).expect("unit-axis tips are never collinear"))
}

/// Error of one calibrated frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub window: usize,
    pub frame: usize,
    /// Position error per axis of the reference frame (meters).
    pub translation: [f64; 3],
    /// Roll, pitch and yaw of the rotation error (degrees).
    pub rotation_deg: [f64; 3],
}

fn frame_error(calibration: &Pose, estimated: &Pose, truth: &Pose) -> ([f64; 3], [f64; 3]) {
    let e = *calibration * estimated.inverse();
    let t = truth.inverse();
    let dp = e.translation - t.translation;
    let rpy = rpy_error(&e.rotation, &t.rotation)
        .map(|v| v.map(f64::to_degrees))
        .unwrap_or_else(|_| Vec3::new(0.0, 90.0, 0.0));
    ([dp.x, dp.y, dp.z], [rpy.x, rpy.y, rpy.z])
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionReport {
    /// `camera`, or `body_<id>` for a moving body.
    pub name: String,
    pub body: Option<BodyId>,
    /// Fraction of window frames with an estimate.
    pub coverage: f64,
    pub calibrated_windows: usize,
    /// Windows with an estimate too short to calibrate.
    pub uncalibrated_windows: usize,
    pub max_translation_error: [f64; 3],
    pub max_rotation_error_deg: [f64; 3],
    #[serde(skip)]
    pub frames: Vec<FrameError>,
    #[serde(skip)]
    covered: usize,
    #[serde(skip)]
    total: usize,
}

impl MotionReport {
    fn new(name: String, body: Option<BodyId>) -> Self {
        Self {
            name,
            body,
            ..Default::default()
        }
    }

    fn add(&mut self, error: FrameError) {
        for i in 0..3 {
            self.max_translation_error[i] = self.max_translation_error[i].max(error.translation[i].abs());
            self.max_rotation_error_deg[i] = self.max_rotation_error_deg[i].max(error.rotation_deg[i].abs());
        }
        self.frames.push(error);
    }

    pub fn max_rotation_error(&self) -> f64 {
        self.max_rotation_error_deg.iter().copied().fold(0.0, f64::max)
    }

    /// Per-frame errors: window, frame, ex, ey, ez, roll, pitch, yaw.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "window,frame,ex,ey,ez,roll,pitch,yaw")?;
        for f in &self.frames {
            let [x, y, z] = f.translation;
            let [r, p, yw] = f.rotation_deg;
            writeln!(w, "{},{},{x},{y},{z},{r},{p},{yw}", f.window, f.frame)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// Largest calibrated camera position error over all windows (meters).
    pub max_drift: f64,
    /// True camera path length of that window (meters).
    pub path_length: f64,
    /// Largest drift as a percentage of its window's path length; absent
    /// when the camera never moves.
    pub drift_percent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub method: Method,
    pub windows: usize,
    pub model_count_correct: usize,
    pub model_count_fraction: f64,
    pub camera_drift: Option<DriftReport>,
    pub motions: Vec<MotionReport>,
}

/// Majority vote of the label's support over true bodies. Ties go to the
/// body with more observations inside the label's span, then to the lower
/// id.
pub fn associate(
    support: &[Tracklet],
    span: Option<[usize; 2]>,
    truth: &SceneTruth,
) -> Option<BodyId> {
    let mut tally: BTreeMap<BodyId, (usize, usize)> = BTreeMap::new();
    for t in support {
        let Some(body) = truth.body_of(t.id) else { continue };
        let overlap = span.map_or(0, |[a, b]| (a..=b).filter(|&k| t.observed(k)).count());
        let e = tally.entry(body).or_default();
        e.0 += 1;
        e.1 += overlap;
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(body, _)| body)
}

/// Number of bodies with at least `min_support` tracklets in the window.
pub fn true_motion_count(local: &[Tracklet], truth: &SceneTruth, min_support: usize) -> usize {
    let mut counts: BTreeMap<BodyId, usize> = BTreeMap::new();
    for t in local {
        if let Some(b) = truth.body_of(t.id) {
            *counts.entry(b).or_default() += 1;
        }
    }
    counts.values().filter(|&&n| n >= min_support).count()
}

/// Truth geocentric motion of `body` about the point `center` (given in the
/// first camera frame) with axes of the first camera frame, matching how
/// estimated geocentric trajectories are expressed.
pub fn true_geocentric(truth: &SceneTruth, body: BodyId, center: Vec3) -> Vec<Pose> {
    let traj = &truth.bodies[body].trajectory;
    let y = Pose::from_translation(center) * truth.camera[0] * traj[0];
    let y_inv = y.inverse();
    traj.iter()
        .map(|b| y * (b.inverse() * traj[0]) * y_inv)
        .collect()
}

fn score(
    report: &mut MotionReport,
    window: &WindowDump,
    estimated: &[Option<Pose>],
    truth: &[Pose],
    n_frames: usize,
) -> Option<(f64, f64)> {
    let covered = estimated.iter().filter(|p| p.is_some()).count();
    report.covered += covered;
    report.total += window.frames;
    let truth_opt: Vec<Option<Pose>> = truth.iter().copied().map(Some).collect();
    let Ok(calibration) = calibrate_frames(estimated, &truth_opt, n_frames) else {
        if covered > 0 {
            report.uncalibrated_windows += 1;
        }
        return None;
    };
    report.calibrated_windows += 1;
    let mut drift: f64 = 0.0;
    for (k, (e, t)) in estimated.iter().zip(truth).enumerate() {
        let Some(e) = e else { continue };
        let (translation, rotation_deg) = frame_error(&calibration, e, t);
        drift = drift.max(Vec3::from(translation).norm());
        report.add(FrameError {
            window: window.window,
            frame: window.start + k,
            translation,
            rotation_deg,
        });
    }
    let path: f64 = truth
        .windows(2)
        .map(|w| (w[1].inverse().translation - w[0].inverse().translation).norm())
        .sum();
    Some((drift, path))
}

/// Scores every window dump against the truth of the whole sequence.
pub fn evaluate(
    dumps: &[WindowDump],
    truth: &SceneTruth,
    tracklets: &[Tracklet],
    options: &EvalOptions,
) -> ErrorReport {
    let method = dumps.first().map_or(Method::Mvo, |d| d.method);
    let mut camera = MotionReport::new("camera".into(), None);
    let mut bodies: Vec<MotionReport> = truth
        .bodies
        .iter()
        .skip(1)
        .map(|b| MotionReport::new(format!("body_{}", b.id), Some(b.id)))
        .collect();
    let mut correct = 0;
    let mut drift: Option<DriftReport> = None;

    for dump in dumps {
        let local = window_tracklets(tracklets, dump.start, dump.frames);
        let wt = truth.window(dump.start, dump.frames);
        if dump.labels.len() == true_motion_count(&local, &wt, options.min_support_points) {
            correct += 1;
        }
        let by_id: BTreeMap<_, _> = local.iter().map(|t| (t.id, t)).collect();

        // Association: per body, the label with the most votes.
        let mut best: BTreeMap<BodyId, (usize, LabelId)> = BTreeMap::new();
        for l in &dump.labels {
            let support: Vec<Tracklet> = l
                .support
                .iter()
                .filter_map(|id| by_id.get(id).map(|t| (*t).clone()))
                .collect();
            let Some(body) = associate(&support, l.span, &wt) else { continue };
            let votes = support.iter().filter(|t| wt.body_of(t.id) == Some(body)).count();
            let entry = best.entry(body).or_insert((votes, l.id));
            if votes > entry.0 || (votes == entry.0 && l.id < entry.1) {
                *entry = (votes, l.id);
            }
        }

        let (camera_traj, _) = dump.trajectories();
        let true_camera: Vec<Pose> = (0..dump.frames).map(|k| wt.camera_motion(k, 0)).collect();
        let no_estimate = vec![None; dump.frames];
        let cam_poses = camera_traj.as_ref().map_or(&no_estimate, |c| &c.poses);
        if let Some((d, path)) = score(&mut camera, dump, cam_poses, &true_camera, options.calibration_frames) {
            let percent = (path > 0.0).then(|| 100.0 * d / path);
            let worse = drift.as_ref().map_or(true, |r| d > r.max_drift);
            if worse {
                drift = Some(DriftReport {
                    max_drift: d,
                    path_length: path,
                    drift_percent: percent,
                });
            }
        }

        for report in &mut bodies {
            let body = report.body.expect("bodies carry ids");
            let estimate = best.get(&body).and_then(|&(_, id)| {
                let l = dump.label(id)?;
                let cam = camera_traj.as_ref()?;
                let r = l.center()?;
                Some((crate::trajectory::geocentric(&l.label(), cam, r), r))
            });
            match estimate {
                Some((geo, r)) => {
                    let t = true_geocentric(&wt, body, r);
                    score(report, dump, &geo.poses, &t, options.calibration_frames);
                }
                None => {
                    report.total += dump.frames;
                }
            }
        }
    }

    let mut motions = vec![camera];
    motions.extend(bodies);
    for m in &mut motions {
        m.coverage = if m.total > 0 { m.covered as f64 / m.total as f64 } else { 0.0 };
    }
    ErrorReport {
        method,
        windows: dumps.len(),
        model_count_correct: correct,
        model_count_fraction: if dumps.is_empty() { 0.0 } else { correct as f64 / dumps.len() as f64 },
        camera_drift: drift,
        motions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{Rotation, Twist};

    fn trajectory(n: usize) -> Vec<Option<Pose>> {
        (0..n)
            .map(|k| {
                let a = k as f64;
                Some(Pose::exp(&Twist::new(
                    Vec3::new(0.1 * a, 0.02 * a, -0.05 * a),
                    Vec3::new(0.01 * a, -0.03 * a, 0.02 * a),
                )))
            })
            .collect()
    }

    #[test]
    fn calibration_of_identical_trajectories_is_identity() {
        let t = trajectory(30);
        let g = calibrate_frames(&t, &t, 25).unwrap();
        assert!((g.to_homogeneous() - Pose::identity().to_homogeneous()).abs().max() < 1e-12);
    }

    #[test]
    fn calibration_recovers_fixed_transform() {
        let est = trajectory(30);
        let g = Pose::new(Rotation::from_rpy(0.3, -0.2, 1.1), Vec3::new(1.0, -2.0, 0.5));
        let truth: Vec<Option<Pose>> = est.iter().map(|p| p.map(|p| (g * p.inverse()).inverse())).collect();
        let found = calibrate_frames(&est, &truth, 25).unwrap();
        assert!((found.to_homogeneous() - g.to_homogeneous()).abs().max() < 1e-9);
    }

    #[test]
    fn static_trajectory_still_calibrates() {
        let est = vec![Some(Pose::identity()); 25];
        let g = calibrate_frames(&est, &est, 25).unwrap();
        assert!((g.to_homogeneous() - Pose::identity().to_homogeneous()).abs().max() < 1e-12);
    }

    #[test]
    fn calibration_needs_overlap() {
        let mut est = trajectory(30);
        for p in est.iter_mut().skip(20) {
            *p = None;
        }
        let err = calibrate_frames(&est, &trajectory(30), 25).unwrap_err();
        assert_eq!(err, EvalError::InsufficientOverlap { needed: 25, available: 20 });
    }

    #[test]
    fn frame_error_is_zero_for_exact_estimate() {
        let t = trajectory(3)[2].unwrap();
        let (dp, dr) = frame_error(&Pose::identity(), &t, &t);
        assert!(dp.iter().chain(&dr).all(|v| v.abs() < 1e-12));
    }
}

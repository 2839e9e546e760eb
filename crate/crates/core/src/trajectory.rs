//! Egocentric and geocentric trajectories from per-label egomotion
//! hypotheses.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::camera::StereoIntrinsics;
use crate::labeling::{label_residual, Label, LabelId, Labeling, Slot};
use crate::se3::{Pose, Vec3};
use crate::tracklet::Tracklet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Egocentric,
    Geocentric,
}

impl FrameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Egocentric => "egocentric",
            FrameKind::Geocentric => "geocentric",
        }
    }
}

/// Per-frame motion `T_{ℓ_k ℓ_1}` of one label; `None` marks a gap.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionTrajectory {
    pub label: LabelId,
    pub kind: FrameKind,
    pub poses: Vec<Option<Pose>>,
    /// Center of motion, for geocentric trajectories of bodies.
    pub center: Option<Vec3>,
}

impl MotionTrajectory {
    pub fn covered(&self) -> usize {
        self.poses.iter().filter(|p| p.is_some()).count()
    }

    /// One row per frame: frame, 12 row-major pose numbers (empty on gaps),
    /// frame kind, label id.
    pub fn write_csv<W: Write>(&self, mut w: W, first_frame: usize) -> std::io::Result<()> {
        for (k, pose) in self.poses.iter().enumerate() {
            write!(w, "{}", first_frame + k)?;
            match pose {
                Some(p) => {
                    for v in p.to_row_major() {
                        write!(w, ",{v}")?;
                    }
                }
                None => write!(w, "{}", ",".repeat(12))?,
            }
            writeln!(w, ",{},{}", self.kind.as_str(), self.label)?;
        }
        Ok(())
    }
}

/// The label's motion as seen from a camera that considers itself fixed:
/// the inverse of the hypothesis at every covered frame.
pub fn egocentric(label: &Label) -> MotionTrajectory {
    MotionTrajectory {
        label: label.id,
        kind: FrameKind::Egocentric,
        poses: label.poses().iter().map(|p| p.map(|p| p.inverse())).collect(),
        center: None,
    }
}

/// The label most likely to be the static scene: largest support, then
/// lowest mean residual over its support, then lowest id.
pub fn select_static_label(
    labeling: &Labeling,
    tracklets: &[Tracklet],
    intrinsics: &StereoIntrinsics,
) -> Option<LabelId> {
    let sizes: Vec<(LabelId, usize)> = labeling
        .labels()
        .iter()
        .map(|l| (l.id, labeling.support_size(l.id)))
        .collect();
    let largest = sizes.iter().map(|s| s.1).max()?;
    let mean_residual = |id: LabelId| -> f64 {
        let label = labeling.label(id).expect("listed label");
        let support = labeling.support(Slot::Label(id));
        if support.is_empty() {
            return f64::INFINITY;
        }
        let sum: f64 = support
            .iter()
            .map(|&i| label_residual(intrinsics, &tracklets[i], label).unwrap_or(f64::INFINITY))
            .sum();
        sum / support.len() as f64
    };
    let tied: Vec<LabelId> = sizes.iter().filter(|s| s.1 == largest).map(|s| s.0).collect();
    if tied.len() == 1 {
        return Some(tied[0]);
    }
    tied.into_iter()
        .map(|id| (mean_residual(id), id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// Camera motion `T_{C_k C_1}`: the static label's hypothesis.
pub fn camera_trajectory(static_label: &Label) -> MotionTrajectory {
    MotionTrajectory {
        label: static_label.id,
        kind: FrameKind::Geocentric,
        poses: static_label.poses().to_vec(),
        center: None,
    }
}

/// `r = −mean_j (T_{t_j})⁻¹·p_j(t_j)`: minus the centroid of the support's
/// first observed points, carried into the label's first frame. Points first
/// seen outside the label's span use their first covered frame instead.
pub fn center_of_motion(label: &Label, support: &[&Tracklet]) -> Option<Vec3> {
    let mut sum = Vec3::zeros();
    let mut n = 0usize;
    for t in support {
        let first = t
            .observations()
            .find_map(|(k, obs)| label.pose(k).map(|pose| pose.inverse().transform(&obs.point)));
        if let Some(p) = first {
            sum += p;
            n += 1;
        }
    }
    (n > 0).then(|| -sum / n as f64)
}

/// `T_{ℓ_k ℓ_1} = T_{ℓ₁C₁}·(ᵉT_k)⁻¹·T_{C_k C_1}·T_{ℓ₁C₁}⁻¹` with
/// `T_{ℓ₁C₁} = [I | r]`. Frames missing from either input are gaps.
pub fn geocentric(label: &Label, camera: &MotionTrajectory, center: Vec3) -> MotionTrajectory {
    let offset = Pose::from_translation(center);
    let offset_inv = offset.inverse();
    let poses = label
        .poses()
        .iter()
        .enumerate()
        .map(|(k, hyp)| {
            let cam = camera.poses.get(k).copied().flatten()?;
            let hyp = (*hyp)?;
            Some(offset * hyp.inverse() * cam * offset_inv)
        })
        .collect();
    MotionTrajectory {
        label: label.id,
        kind: FrameKind::Geocentric,
        poses,
        center: Some(center),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{Rotation, Twist};

    fn poses(n: usize, f: impl Fn(usize) -> Pose) -> Vec<Option<Pose>> {
        (0..n).map(|k| Some(f(k))).collect()
    }

    fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.to_homogeneous() - b.to_homogeneous()).abs().max() < tol
    }

    #[test]
    fn egocentric_inverts() {
        let l = Label::new(1, poses(3, |k| Pose::from_translation(Vec3::new(k as f64, 0.0, 0.0))));
        let e = egocentric(&l);
        assert!(close(&e.poses[1].unwrap(), &Pose::from_translation(Vec3::new(-1.0, 0.0, 0.0)), 1e-15));
        let id = egocentric(&Label::new(2, poses(3, |_| Pose::identity())));
        assert!(id.poses.iter().all(|p| close(&p.unwrap(), &Pose::identity(), 1e-15)));
        let back: Vec<_> = e.poses.iter().map(|p| p.map(|p| p.inverse())).collect();
        for (a, b) in back.iter().zip(l.poses()) {
            assert!(close(&a.unwrap(), &b.unwrap(), 1e-15));
        }
    }

    #[test]
    fn static_label_prefers_support_then_id() {
        let mut labeling = Labeling::all_outliers(6);
        let a = labeling.add_label(poses(2, |_| Pose::identity()));
        let b = labeling.add_label(poses(2, |_| Pose::identity()));
        for i in 0..4 {
            labeling.assignment[i] = Slot::Label(b);
        }
        labeling.assignment[4] = Slot::Label(a);
        let tracklets: Vec<Tracklet> = Vec::new();
        let cam = StereoIntrinsics::default();
        // Residuals are never evaluated without a tie.
        assert_eq!(select_static_label(&labeling, &tracklets, &cam), Some(b));
        assert_eq!(select_static_label(&Labeling::all_outliers(3), &tracklets, &cam), None);
    }

    #[test]
    fn geocentric_of_static_label_is_identity() {
        let cam = poses(5, |k| Pose::exp(&Twist::new(Vec3::new(0.1 * k as f64, 0.0, 0.02), Vec3::new(0.0, 0.03 * k as f64, 0.0))));
        let label = Label::new(0, cam.clone());
        let camera = camera_trajectory(&label);
        let g = geocentric(&label, &camera, Vec3::new(0.3, -1.0, 2.0));
        for p in &g.poses {
            assert!(close(&p.unwrap(), &Pose::identity(), 1e-12));
        }
    }

    #[test]
    fn geocentric_rotation_ignores_center_and_gaps_propagate() {
        let cam = poses(4, |k| Pose::from_translation(Vec3::new(0.0, 0.0, -0.1 * k as f64)));
        let mut hyp = poses(4, |k| Pose::new(Rotation::rz(0.2 * k as f64), Vec3::new(0.05, 0.0, 0.0)));
        hyp[2] = None;
        let label = Label::new(3, hyp);
        let mut camera = camera_trajectory(&Label::new(0, cam));
        camera.poses[3] = None;
        let a = geocentric(&label, &camera, Vec3::new(0.0, 0.0, -2.0));
        let b = geocentric(&label, &camera, Vec3::new(1.0, 0.5, -3.0));
        assert!(a.poses[2].is_none() && a.poses[3].is_none());
        let (pa, pb) = (a.poses[1].unwrap(), b.poses[1].unwrap());
        assert!((pa.rotation.matrix() - pb.rotation.matrix()).abs().max() < 1e-12);
        assert!((pa.translation - pb.translation).norm() > 1e-3);
    }

    #[test]
    fn static_camera_conjugates_egocentric() {
        let hyp = poses(3, |k| Pose::new(Rotation::rx(0.1 * k as f64), Vec3::new(0.0, 0.02 * k as f64, 0.0)));
        let label = Label::new(1, hyp);
        let camera = camera_trajectory(&Label::new(0, poses(3, |_| Pose::identity())));
        let r = Vec3::new(0.2, 0.1, -3.0);
        let g = geocentric(&label, &camera, r);
        let ego = egocentric(&label);
        let t = Pose::from_translation(r);
        for (a, b) in g.poses.iter().zip(&ego.poses) {
            assert!(close(&a.unwrap(), &(t * b.unwrap() * t.inverse()), 1e-12));
        }
    }

    #[test]
    fn csv_rows_mark_gaps() {
        let t = MotionTrajectory {
            label: 4,
            kind: FrameKind::Egocentric,
            poses: vec![Some(Pose::identity()), None],
            center: None,
        };
        let mut out = Vec::new();
        t.write_csv(&mut out, 10).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "10,1,0,0,0,0,1,0,0,0,0,1,0,egocentric,4");
        assert_eq!(lines[1], "11,,,,,,,,,,,,,egocentric,4");
    }
}

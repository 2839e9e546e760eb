use rayon::prelude::*;

use crate::camera::StereoIntrinsics;
use crate::error::LabelingError;
use crate::tracklet::Tracklet;

use super::{Label, Problem};

/// Image-plane error at frame `k` of predicting the observation from the
/// frame `k − 1` point under the label's frame-to-frame motion. A point
/// pushed behind the camera gets an infinite error.
pub fn frame_residual(
    intrinsics: &StereoIntrinsics,
    tracklet: &Tracklet,
    label: &Label,
    k: usize,
) -> Result<f64, LabelingError> {
    let not_covered = LabelingError::FrameNotCovered { frame: k };
    if k == 0 {
        return Err(not_covered);
    }
    let (prev, cur) = match (tracklet.at(k - 1), tracklet.at(k)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(not_covered),
    };
    let step = label.step(k).ok_or(not_covered)?;
    Ok(predict_error(intrinsics, step, &prev.point, &cur.stereo))
}

pub(crate) fn predict_error(
    intrinsics: &StereoIntrinsics,
    step: &crate::se3::Pose,
    prev: &crate::se3::Vec3,
    observed: &crate::camera::StereoObservation,
) -> f64 {
    let moved = step.transform(prev);
    match intrinsics.project(&moved) {
        Ok(pred) => pred.image_distance(observed),
        Err(_) => f64::INFINITY,
    }
}

/// Largest frame residual over the consecutive frame pairs where both the
/// tracklet and the label are defined.
pub fn label_residual(
    intrinsics: &StereoIntrinsics,
    tracklet: &Tracklet,
    label: &Label,
) -> Result<f64, LabelingError> {
    let mut worst: Option<f64> = None;
    for k in tracklet.consecutive_pairs() {
        let Some(step) = label.step(k) else { continue };
        let (Some(prev), Some(cur)) = (tracklet.at(k - 1), tracklet.at(k)) else {
            continue;
        };
        let e = predict_error(intrinsics, step, &prev.point, &cur.stereo);
        worst = Some(worst.map_or(e, |w: f64| w.max(e)));
    }
    worst.ok_or(LabelingError::NoOverlap)
}

/// Outlier cost: `α·exp(−min ρ / β)` over the given label residuals, so a
/// tracklet that fits some label well is expensive to call an outlier.
/// Zero when no label overlaps the tracklet.
pub fn outlier_residual(residuals: impl IntoIterator<Item = f64>, alpha: f64, beta: f64) -> f64 {
    let best = residuals.into_iter().fold(f64::INFINITY, f64::min);
    if best.is_finite() {
        alpha * (-best / beta).exp()
    } else {
        0.0
    }
}

/// `ρ(p, ℓ)` for every tracklet of the window; non-overlapping pairs are
/// infinite.
pub(crate) fn residual_row(label: &Label, problem: &Problem) -> Vec<f64> {
    problem
        .tracklets
        .par_iter()
        .map(|t| label_residual(&problem.intrinsics, t, label).unwrap_or(f64::INFINITY))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{Pose, Rotation, Vec3};
    use crate::tracklet::FrameObservation;

    fn intr() -> StereoIntrinsics {
        StereoIntrinsics::default()
    }

    fn track_from_points(points: &[Option<Vec3>]) -> Tracklet {
        let cam = intr();
        let obs = points
            .iter()
            .map(|p| {
                p.map(|p| FrameObservation {
                    stereo: cam.project(&p).unwrap(),
                    point: p,
                })
            })
            .collect();
        Tracklet::new(0, 0, obs).unwrap()
    }

    #[test]
    fn exact_motion_has_zero_residual() {
        let step = Pose::new(Rotation::ry(0.02), Vec3::new(0.05, 0.0, 0.01));
        let p0 = Vec3::new(0.3, -0.2, 3.0);
        let p1 = step.transform(&p0);
        let p2 = step.transform(&p1);
        let t = track_from_points(&[Some(p0), Some(p1), Some(p2)]);
        let label = Label::new(0, vec![Some(Pose::identity()), Some(step), Some(step * step)]);
        assert!(frame_residual(&intr(), &t, &label, 1).unwrap() < 1e-9);
        assert!(label_residual(&intr(), &t, &label).unwrap() < 1e-9);
    }

    #[test]
    fn residual_is_max_over_pairs() {
        // Static label, point moves 3 px then 4 px horizontally.
        let cam = intr();
        let z = 4.0;
        let dx = |px: f64| px * z / cam.f_u;
        let p0 = Vec3::new(0.0, 0.0, z);
        let p1 = p0 + Vec3::new(dx(3.0), 0.0, 0.0);
        let p2 = p1 + Vec3::new(dx(4.0), 0.0, 0.0);
        let t = track_from_points(&[Some(p0), Some(p1), Some(p2)]);
        let label = Label::new(0, vec![Some(Pose::identity()); 3]);
        let r = label_residual(&cam, &t, &label).unwrap();
        assert!((r - 4.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn uncovered_frames_are_errors() {
        let t = track_from_points(&[Some(Vec3::new(0.0, 0.0, 2.0)), None, Some(Vec3::new(0.0, 0.0, 2.0))]);
        let label = Label::new(0, vec![Some(Pose::identity()); 3]);
        assert_eq!(
            frame_residual(&intr(), &t, &label, 1),
            Err(LabelingError::FrameNotCovered { frame: 1 })
        );
        assert_eq!(label_residual(&intr(), &t, &label), Err(LabelingError::NoOverlap));
        let t2 = track_from_points(&[Some(Vec3::new(0.0, 0.0, 2.0)), Some(Vec3::new(0.0, 0.0, 2.0))]);
        let half = Label::new(0, vec![Some(Pose::identity()), None]);
        assert_eq!(label_residual(&intr(), &t2, &half), Err(LabelingError::NoOverlap));
    }

    #[test]
    fn behind_camera_is_infinite() {
        let t = track_from_points(&[Some(Vec3::new(0.0, 0.0, 1.0)), Some(Vec3::new(0.0, 0.0, 1.0))]);
        let back = Pose::from_translation(Vec3::new(0.0, 0.0, -2.0));
        let label = Label::new(0, vec![Some(Pose::identity()), Some(back)]);
        assert_eq!(frame_residual(&intr(), &t, &label, 1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn outlier_residual_examples() {
        assert!((outlier_residual([0.0], 100.0, 2.0) - 100.0).abs() < 1e-12);
        let r = outlier_residual([6.0, 2.0, f64::INFINITY], 100.0, 2.0);
        assert!((r - 100.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(outlier_residual([f64::INFINITY], 100.0, 2.0), 0.0);
        assert_eq!(outlier_residual(std::iter::empty(), 100.0, 2.0), 0.0);
    }
}

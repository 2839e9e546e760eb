//! Closed-form rigid alignment and stereo reprojection refinement of a
//! single frame-to-frame motion.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector6};

use crate::camera::{StereoIntrinsics, StereoObservation};
use crate::se3::{skew, Mat3, Pose, Rotation, Twist, Vec3};

/// Least-squares rigid transform with `dst ≈ T·src` (Kabsch). `None` for
/// fewer than three pairs or a rank-deficient covariance.
pub fn align(src: &[Vec3], dst: &[Vec3]) -> Option<Pose> {
    assert_eq!(src.len(), dst.len());
    let n = src.len();
    if n < 3 {
        return None;
    }
    let cs = src.iter().sum::<Vec3>() / n as f64;
    let cd = dst.iter().sum::<Vec3>() / n as f64;
    let mut h = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let s = svd.singular_values;
    if s[1] <= 1e-12 * s[0].max(1e-300) {
        return None;
    }
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let rot = Rotation::from_matrix_unchecked(r);
    let t = cd - r * cs;
    Some(Pose::new(rot, t))
}

/// True when three points are too close together or too nearly collinear
/// to fix a rigid motion.
pub fn is_degenerate(a: &Vec3, b: &Vec3, c: &Vec3, tolerance: f64) -> bool {
    let ab = (b - a).norm();
    let bc = (c - b).norm();
    let ca = (a - c).norm();
    let longest = ab.max(bc).max(ca);
    if ab.min(bc).min(ca) < tolerance {
        return true;
    }
    let twice_area = (b - a).cross(&(c - a)).norm();
    twice_area / longest < tolerance
}

/// Gauss–Newton on the stereo reprojection error of `T·p` against the
/// observations, with left perturbations `T ← exp(δ)·T`.
pub fn refine_step(
    intrinsics: &StereoIntrinsics,
    initial: &Pose,
    pairs: &[(Vec3, StereoObservation)],
    iterations: usize,
) -> Pose {
    refine_step_robust(intrinsics, initial, pairs, iterations, None)
}

/// As [`refine_step`], optionally reweighting each iteration with a Cauchy
/// kernel of the given scale (pixels) so a minority of slightly off
/// points cannot pull the estimate.
pub fn refine_step_robust(
    intrinsics: &StereoIntrinsics,
    initial: &Pose,
    pairs: &[(Vec3, StereoObservation)],
    iterations: usize,
    cauchy_scale: Option<f64>,
) -> Pose {
    let loss = |r2: f64| match cauchy_scale {
        Some(c) => c * c * (r2 / (c * c)).ln_1p(),
        None => r2,
    };
    let weight = |r2: f64| match cauchy_scale {
        Some(c) => 1.0 / (1.0 + r2 / (c * c)),
        None => 1.0,
    };
    let cost_of = |pose: &Pose| -> f64 {
        pairs
            .iter()
            .map(|(p, obs)| match intrinsics.project(&pose.transform(p)) {
                Ok(pred) => loss((obs.as_vector() - pred.as_vector()).norm_squared()),
                Err(_) => f64::INFINITY,
            })
            .sum()
    };
    let mut pose = *initial;
    let mut cost = cost_of(&pose);
    for _ in 0..iterations {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (p, obs) in pairs {
            let q = pose.transform(p);
            let Ok(pred) = intrinsics.project(&q) else { continue };
            let r = obs.as_vector() - pred.as_vector();
            let w = weight(r.norm_squared());
            let s = intrinsics.projection_jacobian(&q);
            let mut dq = SMatrix::<f64, 3, 6>::zeros();
            dq.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::identity());
            dq.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&q)));
            let j = s * dq;
            h += w * j.transpose() * j;
            g += w * j.transpose() * r;
        }
        let Some(chol) = h.cholesky() else { break };
        let delta = chol.solve(&g);
        let candidate = (Pose::exp(&Twist(delta)) * pose).renormalized();
        let new_cost = cost_of(&candidate);
        if !(new_cost <= cost) {
            break;
        }
        pose = candidate;
        cost = new_cost;
        if delta.norm() < 1e-10 {
            break;
        }
    }
    pose
}

/// Sum of squared stereo reprojection errors; infinite if any point lands
/// behind the camera.
pub fn reprojection_cost(
    intrinsics: &StereoIntrinsics,
    pose: &Pose,
    pairs: &[(Vec3, StereoObservation)],
) -> f64 {
    pairs
        .iter()
        .map(|(p, obs)| match intrinsics.project(&pose.transform(p)) {
            Ok(pred) => (obs.as_vector() - pred.as_vector()).norm_squared(),
            Err(_) => f64::INFINITY,
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Quaternion, UnitQuaternion};

    fn sample_pose() -> Pose {
        Pose::exp(&Twist::new(Vec3::new(0.1, -0.05, 0.2), Vec3::new(0.05, -0.1, 0.03)))
    }

    /// Horn's quaternion method, used as an independent check on the SVD
    /// solution.
    fn horn(src: &[Vec3], dst: &[Vec3]) -> Pose {
        let n = src.len() as f64;
        let cs = src.iter().sum::<Vec3>() / n;
        let cd = dst.iter().sum::<Vec3>() / n;
        let mut m = Mat3::zeros();
        for (s, d) in src.iter().zip(dst) {
            m += (s - cs) * (d - cd).transpose();
        }
        let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
        let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
        let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
        let nmat = nalgebra::Matrix4::new(
            sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
            syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
            szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
            sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
        );
        let eig = nmat.symmetric_eigen();
        let i = eig.eigenvalues.imax();
        let q = eig.eigenvectors.column(i);
        let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        let r = uq.to_rotation_matrix().into_inner();
        Pose::new(Rotation::from_matrix_unchecked(r), cd - r * cs)
    }

    #[test]
    fn align_recovers_known_motion() {
        let t = sample_pose();
        let src = vec![
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::new(1.0, 0.2, 4.0),
            Vec3::new(-0.5, 0.7, 3.5),
            Vec3::new(0.3, -0.4, 5.0),
        ];
        let dst: Vec<Vec3> = src.iter().map(|p| t.transform(p)).collect();
        let est = align(&src, &dst).unwrap();
        assert!((est.to_homogeneous() - t.to_homogeneous()).abs().max() < 1e-12);
        let dst3: Vec<Vec3> = src[..3].iter().map(|p| t.transform(p)).collect();
        let est3 = align(&src[..3], &dst3).unwrap();
        assert!((est3.to_homogeneous() - t.to_homogeneous()).abs().max() < 1e-12);
    }

    #[test]
    fn align_matches_horn_under_noise() {
        let t = sample_pose();
        let src: Vec<Vec3> = (0..12)
            .map(|i| {
                let a = i as f64;
                Vec3::new((a * 0.7).sin(), (a * 1.3).cos(), 3.0 + 0.1 * a)
            })
            .collect();
        let dst: Vec<Vec3> = src
            .iter()
            .enumerate()
            .map(|(i, p)| t.transform(p) + Vec3::new(0.01, -0.02, 0.015) * ((i as f64 * 2.1).sin()))
            .collect();
        let a = align(&src, &dst).unwrap();
        let b = horn(&src, &dst);
        assert!((a.to_homogeneous() - b.to_homogeneous()).abs().max() < 1e-9);
    }

    #[test]
    fn degenerate_samples() {
        let a = Vec3::new(0.0, 0.0, 1.0);
        let b = Vec3::new(1.0, 0.0, 1.0);
        assert!(is_degenerate(&a, &a, &b, 1e-3));
        assert!(is_degenerate(&a, &b, &Vec3::new(2.0, 1e-5, 1.0), 1e-3));
        assert!(!is_degenerate(&a, &b, &Vec3::new(0.0, 1.0, 1.0), 1e-3));
        assert!(align(&[a, b, Vec3::new(2.0, 0.0, 1.0)], &[a, b, Vec3::new(2.0, 0.0, 1.0)]).is_none());
    }

    #[test]
    fn refinement_reduces_stereo_error() {
        let cam = StereoIntrinsics::default();
        let t = sample_pose();
        let pts = [
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::new(0.6, 0.2, 4.0),
            Vec3::new(-0.5, 0.4, 3.5),
            Vec3::new(0.3, -0.4, 5.0),
        ];
        let pairs: Vec<(Vec3, StereoObservation)> = pts
            .iter()
            .map(|p| (*p, cam.project(&t.transform(p)).unwrap()))
            .collect();
        let start = Pose::exp(&Twist::new(Vec3::new(0.02, 0.01, -0.03), Vec3::new(0.01, 0.0, -0.01))) * t;
        let refined = refine_step(&cam, &start, &pairs, 10);
        assert!(reprojection_cost(&cam, &refined, &pairs) < 1e-12);
        assert!((refined.to_homogeneous() - t.to_homogeneous()).abs().max() < 1e-7);
    }
}

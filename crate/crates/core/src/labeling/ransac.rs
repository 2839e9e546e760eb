//! Frame-to-frame RANSAC motion estimation, chained into a window
//! trajectory.

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::camera::StereoObservation;
use crate::error::LabelingError;
use crate::se3::{Pose, PoseChain, Vec3};

use super::residual::predict_error;
use super::rigid::{align, is_degenerate, refine_step, refine_step_robust};
use super::{keyed_rng, Problem};

const DEGENERACY_TOLERANCE: f64 = 1e-3;

/// Best motion between frames `k − 1` and `k` for the given tracklets, with
/// its inlier count. `None` when fewer than three tracklets are co-visible
/// or every sample is degenerate.
pub fn estimate_step(
    problem: &Problem,
    members: &[usize],
    k: usize,
    seed: u64,
    key: &[u64],
) -> Option<(Pose, usize)> {
    let params = &problem.params;
    let cam = &problem.intrinsics;
    let pool: Vec<(Vec3, StereoObservation, Vec3)> = members
        .iter()
        .filter_map(|&i| {
            let t = &problem.tracklets[i];
            match (t.at(k - 1), t.at(k)) {
                (Some(a), Some(b)) => Some((a.point, b.stereo, b.point)),
                _ => None,
            }
        })
        .collect();
    if pool.len() < 3 {
        return None;
    }

    let score = |pose: &Pose| -> (usize, f64) {
        let mut count = 0;
        let mut sum = 0.0;
        for (p, obs, _) in &pool {
            let e = predict_error(cam, pose, p, obs);
            if e < params.e_th {
                count += 1;
                sum += e;
            }
        }
        (count, sum)
    };
    let better = |a: (usize, f64), b: (usize, f64)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);

    let mut full_key = key.to_vec();
    full_key.push(k as u64);
    let mut rng = keyed_rng(seed, &full_key);
    let mut best: Option<(Pose, (usize, f64))> = None;
    let mut budget = params.ransac_iterations;
    let mut it = 0;
    while it < budget {
        it += 1;
        let idx = sample(&mut rng, pool.len(), 3);
        let (a, b, c) = (&pool[idx.index(0)], &pool[idx.index(1)], &pool[idx.index(2)]);
        if is_degenerate(&a.0, &b.0, &c.0, DEGENERACY_TOLERANCE)
            || is_degenerate(&a.2, &b.2, &c.2, DEGENERACY_TOLERANCE)
        {
            continue;
        }
        let Some(initial) = align(&[a.0, b.0, c.0], &[a.2, b.2, c.2]) else {
            continue;
        };
        let minimal = [(a.0, a.1), (b.0, b.1), (c.0, c.1)];
        let hypothesis = refine_step(cam, &initial, &minimal, 2);
        let s = score(&hypothesis);
        if best.as_ref().map_or(true, |(_, bs)| better(s, *bs)) {
            best = Some((hypothesis, s));
            if params.ransac_confidence < 1.0 {
                let w = s.0 as f64 / pool.len() as f64;
                let needed = adaptive_iterations(w, params.ransac_confidence);
                budget = needed
                    .max(params.ransac_min_iterations)
                    .min(params.ransac_iterations);
            }
        }
    }
    let (mut pose, mut s) = best?;

    // Polish on the consensus set; keep the result only if it does not
    // lose inliers.
    for _ in 0..2 {
        let inliers: Vec<(Vec3, StereoObservation)> = pool
            .iter()
            .filter(|(p, obs, _)| predict_error(cam, &pose, p, obs) < params.e_th)
            .map(|(p, obs, _)| (*p, *obs))
            .collect();
        if inliers.len() < 3 {
            break;
        }
        let refined = refine_step_robust(cam, &pose, &inliers, 10, Some(params.e_th / 2.0));
        let rs = score(&refined);
        if rs.0 >= s.0 {
            pose = refined;
            s = rs;
        } else {
            break;
        }
    }
    Some((pose, s.0))
}

pub(crate) fn adaptive_iterations(inlier_ratio: f64, confidence: f64) -> usize {
    let w3 = inlier_ratio.powi(3);
    if w3 >= 1.0 {
        return 1;
    }
    if w3 <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w3).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Estimates every frame-to-frame motion of the window from `members` and
/// chains the longest unbroken run into poses relative to its first frame.
pub fn estimate_trajectory(
    problem: &Problem,
    members: &[usize],
    seed: u64,
    key: &[u64],
) -> Result<Vec<Option<Pose>>, LabelingError> {
    let frames = problem.frames;
    let steps: Vec<Option<Pose>> = (0..frames)
        .into_par_iter()
        .map(|k| {
            if k == 0 {
                None
            } else {
                estimate_step(problem, members, k, seed, key).map(|(p, _)| p)
            }
        })
        .collect();
    chain_longest_run(&steps).ok_or(LabelingError::InsufficientTracklets)
}

/// Chains steps `T_{k,k−1}` over the longest run of consecutive available
/// steps (earliest on ties).
pub fn chain_longest_run(steps: &[Option<Pose>]) -> Option<Vec<Option<Pose>>> {
    let mut best: Option<(usize, usize)> = None;
    let mut k = 1;
    while k < steps.len() {
        if steps[k].is_none() {
            k += 1;
            continue;
        }
        let start = k;
        while k < steps.len() && steps[k].is_some() {
            k += 1;
        }
        let run = (start, k - 1);
        if best.map_or(true, |(a, b)| run.1 - run.0 > b - a) {
            best = Some(run);
        }
    }
    let (a, b) = best?;
    let mut poses = vec![None; steps.len()];
    let mut chain = PoseChain::new(Pose::identity());
    poses[a - 1] = Some(Pose::identity());
    for k in a..=b {
        poses[k] = Some(chain.push(steps[k].as_ref().expect("run is contiguous")));
    }
    Some(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Twist;

    #[test]
    fn adaptive_iteration_counts() {
        assert_eq!(adaptive_iterations(1.0, 0.999), 1);
        assert_eq!(adaptive_iterations(0.0, 0.999), usize::MAX);
        // 0.5^3 = 0.125: ln(0.001)/ln(0.875) = 51.7
        assert_eq!(adaptive_iterations(0.5, 0.999), 52);
    }

    #[test]
    fn chain_uses_longest_run() {
        let s = Pose::exp(&Twist::new(Vec3::new(0.1, 0.0, 0.0), Vec3::zeros()));
        let steps = vec![None, Some(s), None, Some(s), Some(s), None];
        let poses = chain_longest_run(&steps).unwrap();
        assert!(poses[0].is_none() && poses[1].is_none() && poses[5].is_none());
        assert_eq!(poses[2], Some(Pose::identity()));
        let p4 = poses[4].unwrap();
        assert!((p4.translation - Vec3::new(0.2, 0.0, 0.0)).norm() < 1e-12);
        assert!(chain_longest_run(&[None, None]).is_none());
    }
}

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::se3::{Pose, Vec3};

use super::ransac::{adaptive_iterations, chain_longest_run, estimate_trajectory};
use super::residual::{label_residual, residual_row};
use super::rigid::{align, is_degenerate, refine_step};
use super::{keyed_rng, Label, Labeling, Problem, Slot};

const BASELINE_KEY: u64 = u64::MAX - 2;
const DEGENERACY_TOLERANCE: f64 = 1e-3;

/// Sequential RANSAC: repeatedly finds the window motion with the most
/// inlier tracklets among those not yet explained, peels off its inliers,
/// and stops once the dominant motion has too few inliers.
///
/// Each hypothesis is the trajectory of one minimal set of three
/// tracklets, so every frame of a hypothesis follows the same points.
pub fn sequential_ransac_baseline(problem: &Problem, seed: u64) -> Labeling {
    let params = &problem.params;
    let mut labeling = Labeling::all_outliers(problem.tracklets.len());
    let mut remaining: Vec<usize> = (0..problem.tracklets.len()).collect();
    let mut round = 0u64;
    while remaining.len() >= params.min_support_points {
        let Some(dominant) = dominant_motion(problem, &remaining, seed, round) else {
            break;
        };
        let inliers = inliers_of(problem, &remaining, &dominant);
        // Refit on the consensus set, keeping whichever explains more.
        let (poses, inliers) = match estimate_trajectory(problem, &inliers, seed, &[BASELINE_KEY, round]) {
            Ok(refit) => {
                let refit_inliers = inliers_of(problem, &remaining, &refit);
                if refit_inliers.len() >= inliers.len() {
                    (refit, refit_inliers)
                } else {
                    (dominant, inliers)
                }
            }
            Err(_) => (dominant, inliers),
        };
        round += 1;
        if inliers.len() < params.min_support_points {
            break;
        }
        let id = labeling.add_label(poses);
        for &i in &inliers {
            labeling.assignment[i] = Slot::Label(id);
        }
        remaining.retain(|i| !inliers.contains(i));
    }
    labeling
}

fn inliers_of(problem: &Problem, candidates: &[usize], poses: &[Option<Pose>]) -> Vec<usize> {
    let row = residual_row(&Label::new(0, poses.to_vec()), problem);
    candidates.iter().copied().filter(|&i| row[i] < problem.params.e_th).collect()
}

/// Trajectory of three tracklets: every frame step they all span, fitted to
/// their points and chained over the longest run.
fn minimal_trajectory(problem: &Problem, sample: [usize; 3]) -> Option<Vec<Option<Pose>>> {
    let cam = &problem.intrinsics;
    let ts = sample.map(|i| &problem.tracklets[i]);
    let steps: Vec<Option<Pose>> = (0..problem.frames)
        .map(|k| {
            if k == 0 {
                return None;
            }
            let mut prev = [Vec3::zeros(); 3];
            let mut cur = [Vec3::zeros(); 3];
            let mut pairs = Vec::with_capacity(3);
            for (j, t) in ts.iter().enumerate() {
                let (a, b) = (t.at(k - 1)?, t.at(k)?);
                prev[j] = a.point;
                cur[j] = b.point;
                pairs.push((a.point, b.stereo));
            }
            if is_degenerate(&prev[0], &prev[1], &prev[2], DEGENERACY_TOLERANCE)
                || is_degenerate(&cur[0], &cur[1], &cur[2], DEGENERACY_TOLERANCE)
            {
                return None;
            }
            let initial = align(&prev, &cur)?;
            Some(refine_step(cam, &initial, &pairs, 2))
        })
        .collect();
    chain_longest_run(&steps)
}

fn dominant_motion(problem: &Problem, remaining: &[usize], seed: u64, round: u64) -> Option<Vec<Option<Pose>>> {
    let params = &problem.params;
    let mut best: Option<(Vec<Option<Pose>>, usize, f64)> = None;
    let mut budget = params.ransac_iterations;
    let mut it = 0;
    while it < budget {
        let mut rng = keyed_rng(seed, &[BASELINE_KEY, round, it as u64]);
        it += 1;
        let idx = sample(&mut rng, remaining.len(), 3);
        let Some(poses) = minimal_trajectory(problem, [0, 1, 2].map(|j| remaining[idx.index(j)])) else {
            continue;
        };
        let label = Label::new(0, poses);
        // Consensus counts explained frame pairs, so a hypothesis spanning a
        // single step cannot outscore one that follows points throughout.
        let (count, pairs, sum) = remaining
            .par_iter()
            .filter_map(|&i| {
                let t = &problem.tracklets[i];
                let e = label_residual(&problem.intrinsics, t, &label).ok()?;
                let covered = t.consecutive_pairs().filter(|&k| label.step(k).is_some()).count();
                (e < params.e_th).then_some((1usize, covered, e))
            })
            .reduce(|| (0, 0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
        let better = best.as_ref().map_or(true, |b| pairs > b.1 || (pairs == b.1 && sum < b.2));
        if better {
            let w = count as f64 / remaining.len() as f64;
            best = Some((label.poses().to_vec(), pairs, sum));
            if params.ransac_confidence < 1.0 {
                budget = adaptive_iterations(w, params.ransac_confidence)
                    .max(params.ransac_min_iterations)
                    .min(params.ransac_iterations);
            }
        }
    }
    best.filter(|b| b.1 > 0).map(|b| b.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scene, presets};

    #[test]
    fn noise_free_scene_peels_off_every_motion() {
        let scene = presets::frustum_exit();
        let mut scene = crate::sim::SceneConfig { noise_sigma: 0.0, dropout: 0.0, ..scene };
        scene.frames = 6;
        let (tracklets, truth) = generate_scene(&scene, 4).unwrap();
        let mut problem = Problem::new(&tracklets, scene.intrinsics.clone(), Default::default());
        problem.frames = 6;
        let labeling = sequential_ransac_baseline(&problem, 1);
        for label in labeling.labels() {
            let members = labeling.support(Slot::Label(label.id));
            let body = truth.body_of(tracklets[members[0]].id);
            assert!(members.iter().all(|&i| truth.body_of(tracklets[i].id) == body));
        }
        let bodies: std::collections::BTreeSet<_> = truth.assignment.values().collect();
        assert_eq!(labeling.labels().len(), bodies.len());
        assert!(labeling.support(Slot::Outlier).is_empty());
    }
}

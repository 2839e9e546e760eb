use rayon::prelude::*;

use super::ransac::estimate_trajectory;
use super::residual::residual_row;
use super::{Label, LabelId, Labeling, Problem, ResidualCache, Slot};

const OUTLIER_KEY: u64 = u64::MAX;

/// Fits a fresh motion to every connected component of every label's
/// support (the outlier label included). Component members that the new
/// motion does not explain are moved to the outlier label. Returned labels
/// have fresh ids and are not yet in `labeling`.
///
/// A label whose support is a single component equal to the set it was
/// estimated from would reproduce itself, so it is skipped.
pub fn propose_labels(
    labeling: &mut Labeling,
    problem: &Problem,
    cache: &mut ResidualCache,
    seed: u64,
    iteration: usize,
) -> Vec<Label> {
    let mut jobs: Vec<(Option<LabelId>, Vec<usize>)> = Vec::new();
    for label in labeling.labels() {
        let support = labeling.support(Slot::Label(label.id));
        if support.is_empty() {
            continue;
        }
        let comps = problem.graph.connected_components(&support);
        if comps.len() == 1 && support == label.estimated_from {
            continue;
        }
        jobs.extend(comps.into_iter().map(|c| (Some(label.id), c)));
    }
    let outliers = labeling.support(Slot::Outlier);
    jobs.extend(
        problem
            .graph
            .connected_components(&outliers)
            .into_iter()
            .map(|c| (None, c)),
    );
    jobs.retain(|(_, c)| c.len() >= 3);

    let e_th = problem.params.e_th;
    let fitted: Vec<Option<(Vec<Option<crate::se3::Pose>>, Vec<f64>)>> = jobs
        .par_iter()
        .map(|(source, comp)| {
            let key = [
                iteration as u64,
                source.map_or(OUTLIER_KEY, u64::from),
                u64::from(problem.id(comp[0])),
            ];
            let poses = estimate_trajectory(problem, comp, seed, &key).ok()?;
            let probe = Label::new(0, poses.clone());
            let row = residual_row(&probe, problem);
            let inliers = comp.iter().filter(|&&i| row[i] < e_th).count();
            (inliers >= 3).then_some((poses, row))
        })
        .collect();

    let mut proposals = Vec::new();
    for ((source, comp), fit) in jobs.into_iter().zip(fitted) {
        let Some((poses, row)) = fit else { continue };
        if source.is_some() {
            for &i in &comp {
                if row[i] >= e_th {
                    labeling.assignment[i] = Slot::Outlier;
                }
            }
        }
        let id = labeling.fresh_id();
        cache.insert(id, row);
        proposals.push(Label::new(id, poses).with_estimated_from(comp));
    }
    proposals
}

use super::merge::merge_labels;
use super::{Labeling, Problem, ResidualCache, Slot};

/// Final cleanup of a window's labeling: unrestricted merging, removal of
/// labels with too little support or too short a trajectory, and eviction
/// of tracklets whose residual exceeds the inlier threshold. The size check
/// is repeated after eviction so no undersized label survives.
pub fn sanitize(
    labeling: &Labeling,
    problem: &Problem,
    cache: &mut ResidualCache,
    seed: u64,
    iteration: usize,
) -> Labeling {
    let params = &problem.params;
    let mut out = merge_labels(labeling, problem, cache, seed, iteration, false);
    drop_small(&mut out, problem);
    let rows = cache.rows(&out, problem);
    let ids: Vec<_> = out.labels().iter().map(|l| l.id).collect();
    for (i, slot) in out.assignment.iter_mut().enumerate() {
        if let Slot::Label(id) = *slot {
            let c = ids.binary_search(&id).expect("consistent labeling");
            if !(rows[c][i] <= params.e_th) {
                *slot = Slot::Outlier;
            }
        }
    }
    drop_small(&mut out, problem);
    out.prune_empty();
    out
}

fn drop_small(labeling: &mut Labeling, problem: &Problem) {
    let params = &problem.params;
    let sizes = labeling.support_sizes();
    let small: Vec<_> = labeling
        .labels()
        .iter()
        .zip(sizes)
        .filter(|(l, n)| *n < params.min_support_points || l.span_len() < params.min_support_frames)
        .map(|(l, _)| l.id)
        .collect();
    for id in small {
        labeling.remove_label(id);
    }
}

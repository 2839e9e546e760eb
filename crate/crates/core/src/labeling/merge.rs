use std::collections::{BTreeSet, HashMap};

use super::energy::energy_cached;
use super::ransac::estimate_trajectory;
use super::{Label, LabelId, Labeling, Problem, ResidualCache, Slot};

const MERGE_KEY: u64 = u64::MAX - 1;
/// Fraction of one label's tracklets that must fit the other before a
/// restricted merge is tried.
const FIT_FRACTION: f64 = 0.5;

/// Greedily merges pairs of labels whose supports touch in the graph,
/// applying the single best energy-lowering merge until none remains.
///
/// A merge either keeps one label's trajectory for the union of both
/// supports or re-estimates a fresh trajectory on the union. Tracklets the
/// surviving trajectory cannot explain at all go to the outlier label. With
/// `restricted`, a pair is only tried when most of one label's tracklets
/// already fit the other.
pub fn merge_labels(
    labeling: &Labeling,
    problem: &Problem,
    cache: &mut ResidualCache,
    seed: u64,
    iteration: usize,
    restricted: bool,
) -> Labeling {
    let mut current = labeling.clone();
    current.prune_empty();
    let mut energy = energy_cached(&current, problem, cache).total;
    let e_th = problem.params.e_th;
    let mut refits: HashMap<(LabelId, LabelId), Option<Label>> = HashMap::new();

    loop {
        let pairs = adjacent_pairs(&current, problem);
        let mut best: Option<(f64, Labeling)> = None;
        for (a, b) in pairs {
            let support_a = current.support(Slot::Label(a));
            let support_b = current.support(Slot::Label(b));
            let row_a = cache.get(current.label(a).expect("active label"), problem);
            let row_b = cache.get(current.label(b).expect("active label"), problem);
            let fits_a = fit_fraction(&support_b, &row_a, e_th) >= FIT_FRACTION;
            let fits_b = fit_fraction(&support_a, &row_b, e_th) >= FIT_FRACTION;
            if restricted && !fits_a && !fits_b {
                continue;
            }

            let mut options: Vec<Labeling> = Vec::new();
            if !restricted || fits_a {
                options.push(absorb(&current, a, b, &row_a));
            }
            if !restricted || fits_b {
                options.push(absorb(&current, b, a, &row_b));
            }
            if !refits.contains_key(&(a, b)) {
                let mut union: Vec<usize> = support_a.iter().chain(&support_b).copied().collect();
                union.sort_unstable();
                let key = [iteration as u64, MERGE_KEY, u64::from(a), u64::from(b)];
                let fitted = estimate_trajectory(problem, &union, seed, &key)
                    .ok()
                    .map(|poses| Label::new(current.fresh_id(), poses).with_estimated_from(union));
                refits.insert((a, b), fitted);
            }
            if let Some(label) = refits[&(a, b)].clone() {
                let id = label.id;
                let row = cache.get(&label, problem);
                let mut next = current.clone();
                next.insert_label(label);
                for s in next.assignment.iter_mut() {
                    if *s == Slot::Label(a) || *s == Slot::Label(b) {
                        *s = Slot::Label(id);
                    }
                }
                send_unexplained_to_outliers(&mut next, id, &row);
                next.remove_label(a);
                next.remove_label(b);
                options.push(next);
            }

            for option in options {
                let e = energy_cached(&option, problem, cache).total;
                if e < energy - 1e-9 && best.as_ref().map_or(true, |(be, _)| e < *be) {
                    best = Some((e, option));
                }
            }
        }
        match best {
            Some((e, next)) => {
                // Ids handed to rejected refits stay reserved.
                let high_water = current.next_id;
                current = next;
                current.next_id = current.next_id.max(high_water);
                energy = e;
            }
            None => break,
        }
    }
    current
}

/// Label pairs `(a, b)` with `a < b` joined by at least one graph edge.
fn adjacent_pairs(labeling: &Labeling, problem: &Problem) -> Vec<(LabelId, LabelId)> {
    let mut pairs = BTreeSet::new();
    for e in problem.graph.edges() {
        if let (Slot::Label(a), Slot::Label(b)) = (labeling.assignment[e.a], labeling.assignment[e.b]) {
            if a != b {
                pairs.insert((a.min(b), a.max(b)));
            }
        }
    }
    pairs.into_iter().collect()
}

/// Share of `members` with a finite residual under `row` that fit it
/// within `e_th`.
fn fit_fraction(members: &[usize], row: &[f64], e_th: f64) -> f64 {
    let finite: Vec<f64> = members.iter().map(|&i| row[i]).filter(|r| r.is_finite()).collect();
    if finite.is_empty() {
        return 0.0;
    }
    finite.iter().filter(|&&r| r < e_th).count() as f64 / finite.len() as f64
}

/// `keep` takes over the support of `drop`.
fn absorb(labeling: &Labeling, keep: LabelId, drop: LabelId, row_keep: &[f64]) -> Labeling {
    let mut next = labeling.clone();
    for s in next.assignment.iter_mut() {
        if *s == Slot::Label(drop) {
            *s = Slot::Label(keep);
        }
    }
    send_unexplained_to_outliers(&mut next, keep, row_keep);
    next.remove_label(drop);
    next
}

fn send_unexplained_to_outliers(labeling: &mut Labeling, id: LabelId, row: &[f64]) {
    for (i, s) in labeling.assignment.iter_mut().enumerate() {
        if *s == Slot::Label(id) && !row[i].is_finite() {
            *s = Slot::Outlier;
        }
    }
}

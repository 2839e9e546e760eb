use std::sync::Arc;

use serde::Serialize;

use super::residual::outlier_residual;
use super::{Labeling, Problem, ResidualCache, Slot};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub data: f64,
    pub smoothness: f64,
    pub label: f64,
    pub total: f64,
}

/// Data + smoothness + label-cost energy of a labeling.
pub fn total_energy(labeling: &Labeling, problem: &Problem) -> EnergyBreakdown {
    energy_cached(labeling, problem, &mut ResidualCache::new())
}

pub(crate) fn energy_cached(
    labeling: &Labeling,
    problem: &Problem,
    cache: &mut ResidualCache,
) -> EnergyBreakdown {
    let rows = cache.rows(labeling, problem);
    energy_from_rows(labeling, problem, &rows)
}

/// Per-tracklet unary cost of each label (in label order) and of the
/// outlier label (last column).
pub(crate) fn unary_table(labeling: &Labeling, problem: &Problem, rows: &[Arc<Vec<f64>>]) -> Vec<Vec<f64>> {
    let p = &problem.params;
    (0..labeling.len())
        .map(|i| {
            let mut u: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            u.push(outlier_residual(u.iter().copied(), p.alpha, p.beta));
            u
        })
        .collect()
}

pub(crate) fn energy_from_rows(
    labeling: &Labeling,
    problem: &Problem,
    rows: &[Arc<Vec<f64>>],
) -> EnergyBreakdown {
    let p = &problem.params;
    let labels = labeling.labels();
    let column = |slot: Slot| -> Option<usize> {
        match slot {
            Slot::Outlier => None,
            Slot::Label(id) => labels.binary_search_by_key(&id, |l| l.id).ok(),
        }
    };
    let mut data = 0.0;
    let mut used = vec![false; labels.len()];
    for (i, slot) in labeling.assignment.iter().enumerate() {
        match column(*slot) {
            Some(c) => {
                used[c] = true;
                data += rows[c][i];
            }
            None => {
                if let Slot::Label(_) = slot {
                    // Dangling label id: treat as unusable.
                    data += f64::INFINITY;
                } else {
                    data += outlier_residual(rows.iter().map(|r| r[i]), p.alpha, p.beta);
                }
            }
        }
    }
    let cut = problem
        .graph
        .edges()
        .iter()
        .filter(|e| labeling.assignment[e.a] != labeling.assignment[e.b])
        .count();
    let smoothness = p.lambda * cut as f64;
    let label = p.label_cost * used.iter().filter(|u| **u).count() as f64;
    EnergyBreakdown {
        data,
        smoothness,
        label,
        total: data + smoothness + label,
    }
}

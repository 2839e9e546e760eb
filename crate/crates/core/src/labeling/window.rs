use serde::{Deserialize, Serialize};

use crate::error::LabelingError;

use super::assign::assign_labels;
use super::energy::energy_cached;
use super::merge::merge_labels;
use super::propose::propose_labels;
use super::sanitize::sanitize;
use super::{Labeling, Problem, ResidualCache};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Assign,
    Merge,
    Sanitize,
}

/// Energy immediately before and after one optimization step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyStep {
    pub iteration: usize,
    pub stage: Stage,
    pub before: f64,
    pub after: f64,
    pub labels: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowTrace {
    pub steps: Vec<EnergyStep>,
    pub iterations: usize,
    pub converged: bool,
}

/// Segments one window: starting from all outliers, alternates proposal,
/// assignment and merging until the assignment stops changing, then
/// sanitizes.
pub fn run_window(problem: &Problem, seed: u64) -> Result<Labeling, LabelingError> {
    run_window_traced(problem, seed).map(|(l, _)| l)
}

pub fn run_window_traced(
    problem: &Problem,
    seed: u64,
) -> Result<(Labeling, WindowTrace), LabelingError> {
    let params = &problem.params;
    let mut cache = ResidualCache::new();
    let mut labeling = Labeling::all_outliers(problem.tracklets.len());
    let mut trace = WindowTrace::default();

    for iteration in 0..params.max_outer_iterations {
        trace.iterations = iteration + 1;
        let previous = labeling.assignment.clone();
        labeling.prune_empty();
        let proposals = propose_labels(&mut labeling, problem, &mut cache, seed, iteration);

        let mut candidate = labeling.clone();
        for p in &proposals {
            candidate.insert_label(p.clone());
        }
        let before = energy_cached(&candidate, problem, &mut cache).total;
        let mut assigned = assign_labels(&labeling, proposals, problem, &mut cache);
        let after = energy_cached(&assigned, problem, &mut cache).total;
        trace.steps.push(EnergyStep {
            iteration,
            stage: Stage::Assign,
            before,
            after,
            labels: assigned.labels().len(),
        });

        assigned.prune_empty();
        let before = energy_cached(&assigned, problem, &mut cache).total;
        let merged = merge_labels(&assigned, problem, &mut cache, seed, iteration, true);
        let after = energy_cached(&merged, problem, &mut cache).total;
        trace.steps.push(EnergyStep {
            iteration,
            stage: Stage::Merge,
            before,
            after,
            labels: merged.labels().len(),
        });

        labeling = merged;
        if labeling.assignment == previous {
            trace.converged = true;
            break;
        }
    }

    let before = energy_cached(&labeling, problem, &mut cache).total;
    let final_labeling = sanitize(&labeling, problem, &mut cache, seed, params.max_outer_iterations);
    let after = energy_cached(&final_labeling, problem, &mut cache).total;
    trace.steps.push(EnergyStep {
        iteration: trace.iterations,
        stage: Stage::Sanitize,
        before,
        after,
        labels: final_labeling.labels().len(),
    });
    if final_labeling.labels().is_empty() {
        return Err(LabelingError::NoModelsFound);
    }
    Ok((final_labeling, trace))
}

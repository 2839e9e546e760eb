//! Multimotion segmentation by iterated label proposal, energy-minimizing
//! assignment, and label merging.
//!
//! A label is a camera-egomotion hypothesis over the window: the camera
//! trajectory that would explain its tracklets if they were static. Every
//! tracklet is assigned one label or the outlier label, and the assignment
//! minimizes a residual + smoothness + label-cost energy over the
//! neighbourhood graph.

mod assign;
mod baseline;
mod energy;
mod maxflow;
mod merge;
mod propose;
pub mod ransac;
mod residual;
pub mod rigid;
mod sanitize;
mod window;

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::StereoIntrinsics;
use crate::graph::{build_graph, NeighborhoodGraph};
use crate::se3::Pose;
use crate::tracklet::{Tracklet, TrackletId};

pub use assign::{assign_labels, AssignStrategy};
pub use baseline::sequential_ransac_baseline;
pub use energy::{total_energy, EnergyBreakdown};
pub use merge::merge_labels;
pub use propose::propose_labels;
pub use residual::{frame_residual, label_residual, outlier_residual};
pub use sanitize::sanitize;
pub use window::{run_window, run_window_traced, EnergyStep, Stage, WindowTrace};

pub type LabelId = u32;

/// Tuning parameters of the segmentation energy and search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    /// Smoothness weight.
    pub lambda: f64,
    /// Per-label cost paid by every label with non-empty support.
    pub label_cost: f64,
    /// Outlier residual scale.
    pub alpha: f64,
    /// Outlier residual decay (pixels).
    pub beta: f64,
    /// Inlier threshold on the reprojection residual (pixels).
    pub e_th: f64,
    pub k_nn: usize,
    /// Upper bound on RANSAC hypotheses per frame pair.
    pub ransac_iterations: usize,
    /// Lower bound on RANSAC hypotheses per frame pair.
    pub ransac_min_iterations: usize,
    /// Adaptive stopping confidence; `1.0` always runs `ransac_iterations`.
    pub ransac_confidence: f64,
    pub min_support_points: usize,
    pub min_support_frames: usize,
    pub max_outer_iterations: usize,
    pub assign_strategy: AssignStrategy,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            label_cost: 1000.0,
            alpha: 100.0,
            beta: 2.0,
            e_th: 4.0,
            k_nn: 5,
            ransac_iterations: 1000,
            ransac_min_iterations: 100,
            ransac_confidence: 0.999,
            min_support_points: 10,
            min_support_frames: 3,
            max_outer_iterations: 10,
            assign_strategy: AssignStrategy::Auto,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<(), crate::error::ConfigError> {
        use crate::error::ConfigError;
        let positive = [
            ("lambda", self.lambda),
            ("label_cost", self.label_cost),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("e_th", self.e_th),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::new(format!("pipeline.{name}"), "must be positive"));
            }
        }
        let counts = [
            ("k_nn", self.k_nn),
            ("ransac_iterations", self.ransac_iterations),
            ("min_support_points", self.min_support_points),
            ("min_support_frames", self.min_support_frames),
            ("max_outer_iterations", self.max_outer_iterations),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ConfigError::new(format!("pipeline.{name}"), "must be positive"));
            }
        }
        if !(self.ransac_confidence > 0.0 && self.ransac_confidence <= 1.0) {
            return Err(ConfigError::new("pipeline.ransac_confidence", "must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Which label a tracklet carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Label(LabelId),
    Outlier,
}

/// A motion hypothesis: per-frame camera poses `T_{C_k C_s}` relative to
/// the first spanned frame `s`, defined on a contiguous frame span.
#[derive(Clone, Debug, PartialEq)]
pub struct Label {
    pub id: LabelId,
    poses: Vec<Option<Pose>>,
    steps: Vec<Option<Pose>>,
    /// Tracklets the trajectory was estimated from.
    pub(crate) estimated_from: Vec<usize>,
}

impl Label {
    /// Builds a label from per-frame poses, re-anchoring so the first
    /// present pose is the identity.
    pub fn new(id: LabelId, poses: Vec<Option<Pose>>) -> Self {
        let anchor = poses.iter().flatten().next().map(Pose::inverse);
        let poses: Vec<Option<Pose>> = match anchor {
            Some(a) => poses.into_iter().map(|p| p.map(|p| p * a)).collect(),
            None => poses,
        };
        let mut steps = vec![None; poses.len()];
        for k in 1..poses.len() {
            if let (Some(prev), Some(cur)) = (&poses[k - 1], &poses[k]) {
                steps[k] = Some(cur.between(prev));
            }
        }
        if let Some(first) = poses.iter().position(Option::is_some) {
            // Exact identity at the anchor frame.
            let mut poses = poses;
            poses[first] = Some(Pose::identity());
            return Self {
                id,
                poses,
                steps,
                estimated_from: Vec::new(),
            };
        }
        Self {
            id,
            poses,
            steps,
            estimated_from: Vec::new(),
        }
    }

    pub fn frames(&self) -> usize {
        self.poses.len()
    }

    pub fn pose(&self, k: usize) -> Option<&Pose> {
        self.poses.get(k).and_then(Option::as_ref)
    }

    pub fn poses(&self) -> &[Option<Pose>] {
        &self.poses
    }

    /// Frame-to-frame motion `T_{C_k C_{k−1}}`.
    pub fn step(&self, k: usize) -> Option<&Pose> {
        self.steps.get(k).and_then(Option::as_ref)
    }

    /// First and last frames with a pose.
    pub fn span(&self) -> Option<(usize, usize)> {
        let first = self.poses.iter().position(Option::is_some)?;
        let last = self.poses.iter().rposition(Option::is_some)?;
        Some((first, last))
    }

    /// Number of frames with a pose.
    pub fn span_len(&self) -> usize {
        self.poses.iter().filter(|p| p.is_some()).count()
    }

    pub(crate) fn with_estimated_from(mut self, members: Vec<usize>) -> Self {
        self.estimated_from = members;
        self
    }
}

/// The label set plus a total assignment of tracklets to labels.
///
/// Tracklets are referred to by their index in the id-sorted window; the
/// support of a label is the preimage of its id under `assignment`.
#[derive(Clone, Debug, PartialEq)]
pub struct Labeling {
    labels: Vec<Label>,
    pub assignment: Vec<Slot>,
    next_id: LabelId,
}

impl Labeling {
    /// Every tracklet on the outlier label.
    pub fn all_outliers(n: usize) -> Self {
        Self {
            labels: Vec::new(),
            assignment: vec![Slot::Outlier; n],
            next_id: 0,
        }
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, id: LabelId) -> Option<&Label> {
        self.labels
            .binary_search_by_key(&id, |l| l.id)
            .ok()
            .map(|i| &self.labels[i])
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn fresh_id(&mut self) -> LabelId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Adds a label with a fresh id and empty support.
    pub fn add_label(&mut self, poses: Vec<Option<Pose>>) -> LabelId {
        let id = self.fresh_id();
        self.insert_label(Label::new(id, poses));
        id
    }

    pub(crate) fn insert_label(&mut self, label: Label) {
        self.next_id = self.next_id.max(label.id + 1);
        match self.labels.binary_search_by_key(&label.id, |l| l.id) {
            Ok(i) => self.labels[i] = label,
            Err(i) => self.labels.insert(i, label),
        }
    }

    /// Removes a label, moving its support to the outlier label.
    pub fn remove_label(&mut self, id: LabelId) {
        self.labels.retain(|l| l.id != id);
        for s in &mut self.assignment {
            if *s == Slot::Label(id) {
                *s = Slot::Outlier;
            }
        }
    }

    pub fn support(&self, slot: Slot) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == slot)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn support_size(&self, id: LabelId) -> usize {
        self.assignment
            .iter()
            .filter(|s| **s == Slot::Label(id))
            .count()
    }

    /// Support size per label, in label order.
    pub fn support_sizes(&self) -> Vec<usize> {
        let mut counts: HashMap<LabelId, usize> = HashMap::new();
        for s in &self.assignment {
            if let Slot::Label(id) = s {
                *counts.entry(*id).or_default() += 1;
            }
        }
        self.labels
            .iter()
            .map(|l| counts.get(&l.id).copied().unwrap_or(0))
            .collect()
    }

    /// Drops labels with empty support.
    pub fn prune_empty(&mut self) {
        let sizes = self.support_sizes();
        let mut i = 0;
        self.labels.retain(|_| {
            let keep = sizes[i] > 0;
            i += 1;
            keep
        });
    }

    /// Checks that every assigned label exists.
    pub fn is_consistent(&self) -> bool {
        self.assignment.iter().all(|s| match s {
            Slot::Outlier => true,
            Slot::Label(id) => self.label(*id).is_some(),
        })
    }

    /// Labels with non-empty support.
    pub fn active_labels(&self) -> Vec<LabelId> {
        self.labels
            .iter()
            .zip(self.support_sizes())
            .filter(|(_, n)| *n > 0)
            .map(|(l, _)| l.id)
            .collect()
    }
}

/// Everything the engine reads about one window.
pub struct Problem<'a> {
    /// Sorted by id; indices are graph vertices.
    pub tracklets: &'a [Tracklet],
    pub graph: NeighborhoodGraph,
    pub intrinsics: StereoIntrinsics,
    pub params: EnergyParams,
    pub frames: usize,
}

impl<'a> Problem<'a> {
    /// Builds the neighbourhood graph. `tracklets` must be sorted by id.
    pub fn new(
        tracklets: &'a [Tracklet],
        intrinsics: StereoIntrinsics,
        params: EnergyParams,
    ) -> Self {
        debug_assert!(tracklets.windows(2).all(|w| w[0].id < w[1].id));
        let graph = build_graph(tracklets, params.k_nn);
        let frames = tracklets
            .iter()
            .map(|t| t.last_frame() + 1)
            .max()
            .unwrap_or(0);
        Self {
            tracklets,
            graph,
            intrinsics,
            params,
            frames,
        }
    }

    pub fn with_graph(
        tracklets: &'a [Tracklet],
        graph: NeighborhoodGraph,
        intrinsics: StereoIntrinsics,
        params: EnergyParams,
        frames: usize,
    ) -> Self {
        Self {
            tracklets,
            graph,
            intrinsics,
            params,
            frames,
        }
    }

    pub fn id(&self, index: usize) -> TrackletId {
        self.tracklets[index].id
    }
}

/// Per-label residuals `ρ(p, ℓ)` for every tracklet, keyed by label id.
/// A label id always names the same trajectory, so entries never go stale.
#[derive(Default)]
pub struct ResidualCache {
    table: HashMap<LabelId, Arc<Vec<f64>>>,
}

impl ResidualCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, label: &Label, problem: &Problem) -> Arc<Vec<f64>> {
        self.table
            .entry(label.id)
            .or_insert_with(|| Arc::new(residual::residual_row(label, problem)))
            .clone()
    }

    /// Residual rows for every label of `labeling`, in label order.
    pub fn rows(&mut self, labeling: &Labeling, problem: &Problem) -> Vec<Arc<Vec<f64>>> {
        labeling.labels().iter().map(|l| self.get(l, problem)).collect()
    }

    pub fn insert(&mut self, id: LabelId, row: Vec<f64>) {
        self.table.insert(id, Arc::new(row));
    }
}

/// Deterministic generator keyed by a tuple of counters.
pub fn keyed_rng(seed: u64, key: &[u64]) -> ChaCha8Rng {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut h = splitmix(seed);
    for &k in key {
        h = splitmix(h ^ splitmix(k));
    }
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix(h.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{Twist, Vec3};

    #[test]
    fn label_is_anchored_at_first_pose() {
        let a = Pose::exp(&Twist::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.1, 0.0)));
        let b = Pose::exp(&Twist::new(Vec3::new(0.0, 2.0, 0.0), Vec3::new(0.2, 0.0, 0.0)));
        let l = Label::new(0, vec![None, Some(a), Some(b)]);
        assert_eq!(l.pose(1), Some(&Pose::identity()));
        assert_eq!(l.span(), Some((1, 2)));
        let step = l.step(2).unwrap();
        let expected = b.between(&a);
        assert!((step.to_homogeneous() - expected.to_homogeneous()).abs().max() < 1e-12);
        assert!(l.step(1).is_none());
    }

    #[test]
    fn support_and_pruning() {
        let mut lab = Labeling::all_outliers(4);
        let a = lab.add_label(vec![Some(Pose::identity()); 3]);
        let b = lab.add_label(vec![Some(Pose::identity()); 3]);
        lab.assignment[1] = Slot::Label(a);
        lab.assignment[3] = Slot::Label(a);
        assert_eq!(lab.support(Slot::Label(a)), vec![1, 3]);
        assert_eq!(lab.support_sizes(), vec![2, 0]);
        lab.prune_empty();
        assert!(lab.label(b).is_none());
        assert!(lab.is_consistent());
        lab.remove_label(a);
        assert_eq!(lab.support(Slot::Outlier).len(), 4);
    }

    #[test]
    fn keyed_rng_depends_on_every_key() {
        use rand::Rng;
        let x: u64 = keyed_rng(1, &[2, 3]).gen();
        assert_eq!(x, keyed_rng(1, &[2, 3]).gen::<u64>());
        assert_ne!(x, keyed_rng(1, &[3, 2]).gen::<u64>());
        assert_ne!(x, keyed_rng(2, &[2, 3]).gen::<u64>());
    }
}

//! Sliding-window execution: segmentation, per-label bundle adjustment and
//! trajectory extraction for every window of a tracklet sequence.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{refine_label, BatchOptions, GaussNewtonReport};
use crate::camera::StereoIntrinsics;
use crate::error::ConfigError;
use crate::labeling::{
    run_window_traced, sequential_ransac_baseline, EnergyParams, Label, LabelId, Labeling, Problem,
    Slot, WindowTrace,
};
use crate::se3::{serde_pose_seq, Pose, Vec3};
use crate::tracklet::{Tracklet, TrackletId};
use crate::trajectory::{
    camera_trajectory, center_of_motion, egocentric, geocentric, select_static_label,
    MotionTrajectory,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub energy: EnergyParams,
    pub batch: BatchOptions,
    /// Refine every label by bundle adjustment before extracting
    /// trajectories.
    pub bundle_adjust: bool,
    pub window: usize,
    pub stride: usize,
    /// Leading frames used to calibrate estimates against truth.
    pub calibration_frames: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            energy: EnergyParams::default(),
            batch: BatchOptions::default(),
            bundle_adjust: true,
            window: 48,
            stride: 1,
            calibration_frames: 25,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.energy.validate()?;
        self.batch.validate()?;
        if self.window < 2 {
            return Err(ConfigError::new("pipeline.window", "must be at least 2"));
        }
        if self.stride == 0 {
            return Err(ConfigError::new("pipeline.stride", "must be at least 1"));
        }
        if self.calibration_frames < 2 {
            return Err(ConfigError::new("pipeline.calibration_frames", "must be at least 2"));
        }
        Ok(())
    }
}

/// First frame of every window of length `window` advanced by `stride`.
pub fn window_starts(frames: usize, window: usize, stride: usize) -> Result<Vec<usize>, ConfigError> {
    if window < 2 || window > frames {
        return Err(ConfigError::new(
            "window",
            format!("must lie in [2, {frames}] for a {frames}-frame sequence, got {window}"),
        ));
    }
    if stride == 0 {
        return Err(ConfigError::new("stride", "must be at least 1"));
    }
    Ok((0..=frames - window).step_by(stride).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mvo,
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowStatus {
    Ok,
    /// Nothing survived segmentation; the window is an estimation gap.
    NoModels,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelDump {
    pub id: LabelId,
    /// First and last covered frame, window-relative.
    pub span: Option<[usize; 2]>,
    /// Egomotion hypothesis per window frame; null on gaps.
    #[serde(with = "serde_pose_seq")]
    pub poses: Vec<Option<Pose>>,
    pub support: Vec<TrackletId>,
    pub center_of_motion: Option<[f64; 3]>,
    pub solve: Option<GaussNewtonReport>,
    pub solve_error: Option<String>,
}

impl LabelDump {
    pub fn label(&self) -> Label {
        Label::new(self.id, self.poses.clone())
    }

    pub fn center(&self) -> Option<Vec3> {
        self.center_of_motion.map(|c| Vec3::new(c[0], c[1], c[2]))
    }
}

/// Everything one window produced; evaluation reads nothing else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowDump {
    pub window: usize,
    pub start: usize,
    pub frames: usize,
    pub method: Method,
    pub status: WindowStatus,
    pub static_label: Option<LabelId>,
    pub labels: Vec<LabelDump>,
    /// Label per tracklet present in the window; null for outliers.
    pub assignment: BTreeMap<TrackletId, Option<LabelId>>,
    pub trace: Option<WindowTrace>,
}

impl WindowDump {
    pub fn label(&self, id: LabelId) -> Option<&LabelDump> {
        self.labels.iter().find(|l| l.id == id)
    }

    /// Egocentric and geocentric trajectories of every label, and the
    /// camera trajectory, all window-relative.
    pub fn trajectories(&self) -> (Option<MotionTrajectory>, Vec<(MotionTrajectory, Option<MotionTrajectory>)>) {
        let camera = self
            .static_label
            .and_then(|id| self.label(id))
            .map(|l| camera_trajectory(&l.label()));
        let per_label = self
            .labels
            .iter()
            .map(|l| {
                let label = l.label();
                let geo = match (&camera, l.center()) {
                    (Some(c), Some(r)) => Some(geocentric(&label, c, r)),
                    _ => None,
                };
                (egocentric(&label), geo)
            })
            .collect();
        (camera, per_label)
    }
}

/// Tracklets restricted to `[start, start + len)`, re-based and sorted by id.
pub fn window_tracklets(tracklets: &[Tracklet], start: usize, len: usize) -> Vec<Tracklet> {
    let mut out: Vec<Tracklet> = tracklets
        .iter()
        .filter_map(|t| t.window(start, len))
        .filter(|t| t.consecutive_pairs().next().is_some())
        .collect();
    out.sort_by_key(|t| t.id);
    out
}

fn window_seed(seed: u64, start: usize) -> u64 {
    seed ^ (start as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Segments and refines one window.
pub fn process_window(
    tracklets: &[Tracklet],
    intrinsics: &StereoIntrinsics,
    config: &PipelineConfig,
    method: Method,
    seed: u64,
    index: usize,
    start: usize,
) -> WindowDump {
    let local = window_tracklets(tracklets, start, config.window);
    let mut problem = Problem::new(&local, intrinsics.clone(), config.energy.clone());
    problem.frames = config.window;
    let seed = window_seed(seed, start);

    let (labeling, trace) = match method {
        Method::Mvo => match run_window_traced(&problem, seed) {
            Ok((l, t)) => (Some(l), Some(t)),
            Err(_) => (None, None),
        },
        Method::Baseline => {
            let l = sequential_ransac_baseline(&problem, seed);
            ((!l.labels().is_empty()).then_some(l), None)
        }
    };
    let mut dump = WindowDump {
        window: index,
        start,
        frames: config.window,
        method,
        status: WindowStatus::NoModels,
        static_label: None,
        labels: Vec::new(),
        assignment: local.iter().map(|t| (t.id, None)).collect(),
        trace,
    };
    let Some(labeling) = labeling else {
        return dump;
    };
    let (labeling, reports) = if config.bundle_adjust {
        refine_all(&labeling, &local, intrinsics, &config.batch)
    } else {
        let n = labeling.labels().len();
        (labeling, vec![(None, None); n])
    };
    if labeling.labels().is_empty() {
        return dump;
    }

    dump.status = WindowStatus::Ok;
    dump.static_label = select_static_label(&labeling, &local, intrinsics);
    for (i, slot) in labeling.assignment.iter().enumerate() {
        if let Slot::Label(id) = slot {
            dump.assignment.insert(local[i].id, Some(*id));
        }
    }
    for (label, (solve, solve_error)) in labeling.labels().iter().zip(reports) {
        let members = labeling.support(Slot::Label(label.id));
        let support: Vec<&Tracklet> = members.iter().map(|&i| &local[i]).collect();
        dump.labels.push(LabelDump {
            id: label.id,
            span: label.span().map(|(a, b)| [a, b]),
            poses: label.poses().to_vec(),
            support: support.iter().map(|t| t.id).collect(),
            center_of_motion: center_of_motion(label, &support).map(|c| [c.x, c.y, c.z]),
            solve,
            solve_error,
        });
    }
    dump
}

type SolveOutcome = (Option<GaussNewtonReport>, Option<String>);

/// Bundle-adjusts every label. Tracklets pruned as unobservable become
/// outliers; labels left without support are dropped. A label whose solve
/// fails keeps its chained estimate.
fn refine_all(
    labeling: &Labeling,
    tracklets: &[Tracklet],
    intrinsics: &StereoIntrinsics,
    options: &BatchOptions,
) -> (Labeling, Vec<SolveOutcome>) {
    let results: Vec<_> = labeling
        .labels()
        .par_iter()
        .map(|label| {
            let members = labeling.support(Slot::Label(label.id));
            let support: Vec<&Tracklet> = members.iter().map(|&i| &tracklets[i]).collect();
            (members, refine_label(intrinsics, label, &support, options))
        })
        .collect();

    let mut out = labeling.clone();
    let mut outcomes = BTreeMap::new();
    for (label, (members, result)) in labeling.labels().iter().zip(results) {
        match result {
            Ok(refined) => {
                for &j in &refined.pruned {
                    out.assignment[members[j]] = Slot::Outlier;
                }
                out.insert_label(Label::new(label.id, refined.poses));
                outcomes.insert(label.id, (Some(refined.report), None));
            }
            Err(e) => {
                outcomes.insert(label.id, (None, Some(e.to_string())));
            }
        }
    }
    out.prune_empty();
    let reports = out
        .labels()
        .iter()
        .map(|l| outcomes.remove(&l.id).unwrap_or((None, None)))
        .collect();
    (out, reports)
}

/// Runs every window, in parallel, returning dumps in window order.
pub fn run_sequence(
    tracklets: &[Tracklet],
    frames: usize,
    intrinsics: &StereoIntrinsics,
    config: &PipelineConfig,
    method: Method,
    seed: u64,
) -> Result<Vec<WindowDump>, ConfigError> {
    let starts = window_starts(frames, config.window, config.stride)?;
    Ok(starts
        .par_iter()
        .enumerate()
        .map(|(i, &start)| process_window(tracklets, intrinsics, config, method, seed, i, start))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        assert_eq!(window_starts(48, 48, 1).unwrap(), vec![0]);
        assert_eq!(window_starts(10, 4, 3).unwrap(), vec![0, 3, 6]);
        assert!(window_starts(10, 11, 1).is_err());
        assert!(window_starts(10, 1, 1).is_err());
        assert!(window_starts(10, 4, 0).is_err());
    }

    #[test]
    fn config_defaults_round_trip() {
        let c = PipelineConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
        let partial: PipelineConfig = serde_json::from_str(r#"{"stride": 4}"#).unwrap();
        assert_eq!(partial.stride, 4);
        assert_eq!(partial.window, 48);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"strid": 4}"#).is_err());
    }
}

//! Per-label bundle adjustment: joint Gauss–Newton refinement of a label's
//! poses and its tracklets' landmarks against every stereo observation.
//!
//! Landmarks live in the label's first frame and poses map that frame into
//! each later camera frame. The first pose is held fixed. Landmarks are
//! eliminated by Schur complement and the reduced pose system is solved
//! densely.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{StereoIntrinsics, StereoObservation};
use crate::error::{BatchError, CameraError, ConfigError};
use crate::labeling::Label;
use crate::se3::{circle_dot, Pose, Twist, Vec3};
use crate::tracklet::Tracklet;

pub type Mat3x9 = SMatrix<f64, 3, 9>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchOptions {
    /// Measurement standard deviation in pixels, for u, v and d alike.
    pub sigma: f64,
    pub max_iterations: usize,
    /// Stop once the update norm falls below this.
    pub tolerance: f64,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            max_iterations: 50,
            tolerance: 1e-8,
        }
    }
}

impl BatchOptions {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(ConfigError::new("pipeline.batch.sigma", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(ConfigError::new("pipeline.batch.max_iterations", "must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(ConfigError::new("pipeline.batch.tolerance", "must be positive"));
        }
        Ok(())
    }
}

/// Poses keyed by window frame (the lowest frame is the fixed gauge) and
/// landmarks in the gauge frame.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchState {
    pub poses: BTreeMap<usize, Pose>,
    pub landmarks: Vec<Vec3>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchObservation {
    pub landmark: usize,
    pub frame: usize,
    pub stereo: StereoObservation,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussNewtonReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub gradient_norm: f64,
}

/// Predicted stereo observation of `landmark` from the camera at `pose`.
pub fn measurement(
    intrinsics: &StereoIntrinsics,
    pose: &Pose,
    landmark: &Vec3,
) -> Result<StereoObservation, CameraError> {
    intrinsics.project(&pose.transform(landmark))
}

/// Jacobian of [`measurement`] with respect to a left pose perturbation
/// (first six columns) and to the landmark (last three).
pub fn measurement_jacobian(intrinsics: &StereoIntrinsics, pose: &Pose, landmark: &Vec3) -> Mat3x9 {
    let q = pose.transform(landmark);
    let s = intrinsics.projection_jacobian(&q);
    let z = circle_dot(&q.push(1.0));
    let mut j = Mat3x9::zeros();
    j.fixed_view_mut::<3, 6>(0, 0)
        .copy_from(&(s * z.fixed_view::<3, 6>(0, 0)));
    j.fixed_view_mut::<3, 3>(0, 6)
        .copy_from(&(s * pose.rotation.matrix()));
    j
}

/// Least-squares cost `½ Σ eᵀR⁻¹e` with `R = σ²I`; infinite if any point
/// falls behind its camera.
pub fn cost(
    intrinsics: &StereoIntrinsics,
    state: &BatchState,
    observations: &[BatchObservation],
    sigma: f64,
) -> f64 {
    let inv = 1.0 / (sigma * sigma);
    observations
        .iter()
        .map(|o| {
            let pose = &state.poses[&o.frame];
            match measurement(intrinsics, pose, &state.landmarks[o.landmark]) {
                Ok(pred) => 0.5 * inv * (o.stereo.as_vector() - pred.as_vector()).norm_squared(),
                Err(_) => f64::INFINITY,
            }
        })
        .sum()
}

/// Checks that every observed landmark is seen at least twice and every
/// non-gauge pose sees at least three landmarks. Landmarks without any
/// observation are inert and left untouched by [`solve`].
pub fn check_observability(state: &BatchState, observations: &[BatchObservation]) -> Result<(), BatchError> {
    let mut per_landmark = vec![0usize; state.landmarks.len()];
    let mut per_frame: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for o in observations {
        per_landmark[o.landmark] += 1;
        per_frame.entry(o.frame).or_default().push(o.landmark);
    }
    if let Some(j) = per_landmark.iter().position(|&n| n == 1) {
        return Err(BatchError::RankDeficient(format!(
            "landmark {j} has {} observation(s)",
            per_landmark[j]
        )));
    }
    let gauge = state.poses.keys().next().copied();
    for &frame in state.poses.keys() {
        if Some(frame) == gauge {
            continue;
        }
        let mut seen = per_frame.remove(&frame).unwrap_or_default();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() < 3 {
            return Err(BatchError::RankDeficient(format!(
                "frame {frame} sees {} landmark(s)",
                seen.len()
            )));
        }
    }
    Ok(())
}

struct Linearization {
    /// Pose-pose blocks of the normal matrix, dense over free poses.
    app: DMatrix<f64>,
    bp: DVector<f64>,
    /// Per landmark: its 3×3 block, right-hand side, and coupling blocks
    /// to each free pose that observes it.
    landmarks: Vec<(Matrix3<f64>, Vector3<f64>, Vec<(usize, SMatrix<f64, 6, 3>)>)>,
}

fn linearize(
    intrinsics: &StereoIntrinsics,
    state: &BatchState,
    observations: &[BatchObservation],
    free: &BTreeMap<usize, usize>,
    sigma: f64,
) -> Result<Linearization, CameraError> {
    let inv = 1.0 / (sigma * sigma);
    let np = free.len();
    let mut app = DMatrix::<f64>::zeros(6 * np, 6 * np);
    let mut bp = DVector::<f64>::zeros(6 * np);
    let mut landmarks: Vec<(Matrix3<f64>, Vector3<f64>, BTreeMap<usize, SMatrix<f64, 6, 3>>)> =
        vec![(Matrix3::zeros(), Vector3::zeros(), BTreeMap::new()); state.landmarks.len()];

    let blocks: Vec<(Mat3x9, Vector3<f64>)> = observations
        .par_iter()
        .map(|o| {
            let pose = &state.poses[&o.frame];
            let p = &state.landmarks[o.landmark];
            let pred = measurement(intrinsics, pose, p)?;
            Ok((measurement_jacobian(intrinsics, pose, p), o.stereo.as_vector() - pred.as_vector()))
        })
        .collect::<Result<_, CameraError>>()?;

    for (o, (g, e)) in observations.iter().zip(&blocks) {
        let gp = g.fixed_view::<3, 6>(0, 0);
        let gl = g.fixed_view::<3, 3>(0, 6);
        let entry = &mut landmarks[o.landmark];
        entry.0 += inv * gl.transpose() * gl;
        entry.1 += inv * gl.transpose() * e;
        if let Some(&i) = free.get(&o.frame) {
            let mut block = app.fixed_view_mut::<6, 6>(6 * i, 6 * i);
            block += inv * gp.transpose() * gp;
            let mut rhs = bp.fixed_rows_mut::<6>(6 * i);
            rhs += inv * gp.transpose() * e;
            *entry.2.entry(i).or_insert_with(SMatrix::zeros) += inv * gp.transpose() * gl;
        }
    }
    Ok(Linearization {
        app,
        bp,
        landmarks: landmarks
            .into_iter()
            .map(|(a, b, c)| (a, b, c.into_iter().collect()))
            .collect(),
    })
}

/// Solves the damped normal equations by landmark elimination. Returns
/// per-free-pose twists and per-landmark increments.
fn solve_step(
    lin: &Linearization,
    damping: f64,
) -> Result<(Vec<Vector6<f64>>, Vec<Vector3<f64>>), BatchError> {
    let n = lin.app.nrows();
    let mut s = lin.app.clone();
    let mut rhs = lin.bp.clone();
    for i in 0..n {
        s[(i, i)] += damping * s[(i, i)].max(1e-12);
    }
    let mut inverses = Vec::with_capacity(lin.landmarks.len());
    for (j, (all, bl, couplings)) in lin.landmarks.iter().enumerate() {
        if *all == Matrix3::zeros() {
            inverses.push(Matrix3::zeros());
            continue;
        }
        let mut all = *all;
        for d in 0..3 {
            all[(d, d)] += damping * all[(d, d)].max(1e-12);
        }
        let inv = all
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| BatchError::RankDeficient(format!("landmark {j} block is singular")))?;
        let inv_b = inv * bl;
        for (a, wa) in couplings {
            let wa_inv = wa * inv;
            let mut r = rhs.fixed_rows_mut::<6>(6 * a);
            r -= wa * inv_b;
            for (b, wb) in couplings {
                let mut block = s.fixed_view_mut::<6, 6>(6 * a, 6 * b);
                block -= wa_inv * wb.transpose();
            }
        }
        inverses.push(inv);
    }
    let dp = if n == 0 {
        DVector::zeros(0)
    } else {
        let chol = s
            .cholesky()
            .ok_or_else(|| BatchError::RankDeficient("reduced pose system is singular".into()))?;
        chol.solve(&rhs)
    };
    let poses: Vec<Vector6<f64>> = (0..n / 6)
        .map(|i| dp.fixed_rows::<6>(6 * i).into_owned())
        .collect();
    let landmarks = lin
        .landmarks
        .iter()
        .zip(&inverses)
        .map(|((_, bl, couplings), inv)| {
            let mut r = *bl;
            for (a, wa) in couplings {
                r -= wa.transpose() * poses[*a];
            }
            inv * r
        })
        .collect();
    Ok((poses, landmarks))
}

fn apply(
    state: &BatchState,
    free: &BTreeMap<usize, usize>,
    dp: &[Vector6<f64>],
    dl: &[Vector3<f64>],
) -> BatchState {
    let mut next = state.clone();
    for (frame, &i) in free {
        let pose = next.poses.get_mut(frame).expect("free pose exists");
        *pose = (Pose::exp(&Twist(dp[i])) * *pose).renormalized();
    }
    for (p, d) in next.landmarks.iter_mut().zip(dl) {
        *p += d;
    }
    next
}

/// Gauss–Newton on all poses (gauge excluded) and landmarks. A step that
/// raises the cost is retried with growing diagonal damping.
pub fn solve(
    intrinsics: &StereoIntrinsics,
    observations: &[BatchObservation],
    initial: BatchState,
    options: &BatchOptions,
) -> Result<(BatchState, GaussNewtonReport), BatchError> {
    if initial.poses.is_empty() || initial.landmarks.is_empty() || observations.is_empty() {
        return Err(BatchError::EmptyProblem);
    }
    check_observability(&initial, observations)?;
    let free: BTreeMap<usize, usize> = initial
        .poses
        .keys()
        .skip(1)
        .enumerate()
        .map(|(i, &f)| (f, i))
        .collect();
    let sigma = options.sigma;
    let mut state = initial;
    let mut j = cost(intrinsics, &state, observations, sigma);
    if !j.is_finite() {
        return Err(BatchError::Camera(CameraError::BehindCamera { z: f64::NAN }));
    }
    let mut report = GaussNewtonReport {
        initial_cost: j,
        final_cost: j,
        ..Default::default()
    };
    for _ in 0..options.max_iterations {
        let lin = linearize(intrinsics, &state, observations, &free, sigma)?;
        report.iterations += 1;
        let mut damping = 0.0;
        let mut accepted = None;
        for _attempt in 0..12 {
            let (dp, dl) = solve_step(&lin, damping)?;
            let norm = (dp.iter().map(|v| v.norm_squared()).sum::<f64>()
                + dl.iter().map(|v| v.norm_squared()).sum::<f64>())
            .sqrt();
            if norm < options.tolerance {
                accepted = Some((state.clone(), j, norm));
                break;
            }
            let candidate = apply(&state, &free, &dp, &dl);
            let cj = cost(intrinsics, &candidate, observations, sigma);
            if cj <= j {
                accepted = Some((candidate, cj, norm));
                break;
            }
            damping = if damping == 0.0 { 1e-4 } else { damping * 10.0 };
        }
        let Some((next, nj, norm)) = accepted else {
            // No damping level lowers the cost: we are at a minimum to
            // within numerical precision.
            report.converged = true;
            break;
        };
        state = next;
        j = nj;
        if norm < options.tolerance {
            report.converged = true;
            break;
        }
    }
    let lin = linearize(intrinsics, &state, observations, &free, sigma)?;
    let grad2 = lin.bp.norm_squared() + lin.landmarks.iter().map(|l| l.1.norm_squared()).sum::<f64>();
    report.gradient_norm = grad2.sqrt();
    report.final_cost = j;
    Ok((state, report))
}

/// Operating point from a label: its chained poses, and each tracklet's
/// back-projection at its first observed frame carried into the label's
/// first frame. Only frames where the label has a pose are used.
pub fn initialize_from_label(
    label: &Label,
    tracklets: &[&Tracklet],
) -> (BatchState, Vec<BatchObservation>) {
    let poses: BTreeMap<usize, Pose> = label
        .poses()
        .iter()
        .enumerate()
        .filter_map(|(k, p)| p.map(|p| (k, p)))
        .collect();
    let mut landmarks = Vec::with_capacity(tracklets.len());
    let mut observations = Vec::new();
    for (j, t) in tracklets.iter().enumerate() {
        let mut first = None;
        for (k, obs) in t.observations() {
            if let Some(pose) = poses.get(&k) {
                if first.is_none() {
                    first = Some(pose.inverse().transform(&obs.point));
                }
                observations.push(BatchObservation {
                    landmark: j,
                    frame: k,
                    stereo: obs.stereo,
                });
            }
        }
        landmarks.push(first.unwrap_or_else(Vec3::zeros));
    }
    (BatchState { poses, landmarks }, observations)
}

/// Drops landmarks seen fewer than twice and non-gauge frames seeing fewer
/// than three landmarks, repeatedly, until both conditions hold. Returns the
/// indices of dropped landmarks.
pub fn prune_unobservable(state: &mut BatchState, observations: &mut Vec<BatchObservation>) -> Vec<usize> {
    let mut dropped = vec![false; state.landmarks.len()];
    loop {
        let mut changed = false;
        let mut per_landmark = vec![0usize; state.landmarks.len()];
        for o in observations.iter() {
            per_landmark[o.landmark] += 1;
        }
        for (j, &n) in per_landmark.iter().enumerate() {
            if n < 2 && !dropped[j] {
                dropped[j] = true;
                changed = true;
            }
        }
        observations.retain(|o| !dropped[o.landmark]);

        let mut per_frame: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for o in observations.iter() {
            per_frame.entry(o.frame).or_default().push(o.landmark);
        }
        let gauge = state.poses.keys().next().copied();
        let weak: Vec<usize> = state
            .poses
            .keys()
            .copied()
            .filter(|f| Some(*f) != gauge)
            .filter(|f| {
                let mut seen = per_frame.get(f).cloned().unwrap_or_default();
                seen.sort_unstable();
                seen.dedup();
                seen.len() < 3
            })
            .collect();
        for f in &weak {
            state.poses.remove(f);
            changed = true;
        }
        observations.retain(|o| state.poses.contains_key(&o.frame));
        // The gauge itself must see something, or the next frame takes over.
        if let Some(g) = state.poses.keys().next().copied() {
            if !observations.iter().any(|o| o.frame == g) {
                state.poses.remove(&g);
                observations.retain(|o| o.frame != g);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..dropped.len()).filter(|&j| dropped[j]).collect()
}

/// Bundle-adjusted label.
#[derive(Clone, Debug)]
pub struct RefinedLabel {
    /// Poses re-anchored so the first remaining frame is the identity.
    pub poses: Vec<Option<Pose>>,
    /// Landmarks in the first remaining frame, per support position.
    pub landmarks: Vec<Option<Vec3>>,
    /// Positions (within the given support) of tracklets that were dropped.
    pub pruned: Vec<usize>,
    pub report: GaussNewtonReport,
}

/// Initializes from the label, prunes unobservable variables and solves.
pub fn refine_label(
    intrinsics: &StereoIntrinsics,
    label: &Label,
    support: &[&Tracklet],
    options: &BatchOptions,
) -> Result<RefinedLabel, BatchError> {
    let (mut state, mut observations) = initialize_from_label(label, support);
    let pruned = prune_unobservable(&mut state, &mut observations);
    if state.poses.len() < 2 {
        return Err(BatchError::EmptyProblem);
    }
    // Re-anchor at the (possibly new) gauge frame.
    let anchor = *state.poses.values().next().expect("non-empty");
    if anchor != Pose::identity() {
        let inv = anchor.inverse();
        for p in state.poses.values_mut() {
            *p = *p * inv;
        }
        for l in &mut state.landmarks {
            *l = anchor.transform(l);
        }
    }
    let (solved, report) = solve(intrinsics, &observations, state, options)?;
    let mut poses = vec![None; label.frames()];
    for (k, p) in &solved.poses {
        poses[*k] = Some(*p);
    }
    let landmarks = solved
        .landmarks
        .iter()
        .enumerate()
        .map(|(j, l)| (!pruned.contains(&j)).then_some(*l))
        .collect();
    Ok(RefinedLabel {
        poses,
        landmarks,
        pruned,
        report,
    })
}

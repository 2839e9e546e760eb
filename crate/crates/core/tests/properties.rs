use proptest::prelude::*;

use mvo::batch::{solve, BatchObservation, BatchOptions, BatchState};
use mvo::camera::StereoIntrinsics;
use mvo::eval::calibrate_frames;
use mvo::labeling::{assign_labels, total_energy, EnergyParams, Label, Labeling, Problem, ResidualCache, Slot};
use mvo::se3::{Pose, Twist, Vec3};
use mvo::sim::{generate_scene, presets};
use mvo::trajectory::{camera_trajectory, egocentric, geocentric};

fn twist(scale: f64) -> impl Strategy<Value = Twist> {
    prop::array::uniform6(-1.0..1.0f64).prop_map(move |v| {
        Twist::new(Vec3::new(v[0], v[1], v[2]) * scale, Vec3::new(v[3], v[4], v[5]) * scale)
    })
}

fn trajectory(len: usize) -> impl Strategy<Value = Vec<Option<Pose>>> {
    prop::collection::vec(twist(0.3), len - 1).prop_map(|steps| {
        let mut out = vec![Some(Pose::identity())];
        for s in steps {
            let last = out.last().unwrap().unwrap();
            out.push(Some(Pose::exp(&s) * last));
        }
        out
    })
}

fn vec3(scale: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-scale..scale).prop_map(|v| Vec3::new(v[0], v[1], v[2]))
}

fn max_diff(a: &Pose, b: &Pose) -> f64 {
    (a.to_homogeneous() - b.to_homogeneous()).abs().max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_log_round_trip(xi in twist(1.5)) {
        let back = Pose::exp(&xi).log().unwrap();
        prop_assert!((back.0 - xi.0).norm() < 1e-9);
    }

    #[test]
    fn inverse_composes_to_identity(xi in twist(2.0)) {
        let t = Pose::exp(&xi);
        prop_assert!(max_diff(&(t * t.inverse()), &Pose::identity()) < 1e-12);
    }

    #[test]
    fn egocentric_inverts_hypotheses(poses in trajectory(6)) {
        let label = Label::new(1, poses.clone());
        let ego = egocentric(&label);
        for (e, h) in ego.poses.iter().zip(&poses) {
            prop_assert!(max_diff(&(e.unwrap() * h.unwrap()), &Pose::identity()) < 1e-12);
        }
    }

    #[test]
    fn static_label_is_geocentrically_still(poses in trajectory(6), r in vec3(5.0)) {
        let label = Label::new(0, poses);
        let g = geocentric(&label, &camera_trajectory(&label), r);
        for p in &g.poses {
            prop_assert!(max_diff(&p.unwrap(), &Pose::identity()) < 1e-9);
        }
    }

    #[test]
    fn geocentric_rotation_is_independent_of_center(
        cam in trajectory(5), hyp in trajectory(5), r1 in vec3(5.0), r2 in vec3(5.0),
    ) {
        let camera = camera_trajectory(&Label::new(0, cam));
        let label = Label::new(1, hyp);
        let a = geocentric(&label, &camera, r1);
        let b = geocentric(&label, &camera, r2);
        for (pa, pb) in a.poses.iter().zip(&b.poses) {
            let (pa, pb) = (pa.unwrap(), pb.unwrap());
            prop_assert!((pa.rotation.matrix() - pb.rotation.matrix()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn calibration_recovers_a_fixed_offset(est in trajectory(8), g in twist(1.0)) {
        let g = Pose::exp(&g);
        let truth: Vec<Option<Pose>> = est.iter().map(|e| e.map(|e| e * g.inverse())).collect();
        let found = calibrate_frames(&est, &truth, 8).unwrap();
        prop_assert!(max_diff(&found, &g) < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Reassignment never raises the energy of whatever labeling it starts
    /// from.
    #[test]
    fn assignment_never_raises_energy(
        seed in 0u64..1000,
        lambda in 0.0..20.0f64,
        label_cost in 0.0..80.0f64,
        start in prop::collection::vec(0usize..4, 200),
    ) {
        let mut scene = presets::desk();
        scene.frames = 4;
        let (tracklets, truth) = generate_scene(&scene, seed).unwrap();
        let params = EnergyParams { lambda, label_cost, ..EnergyParams::default() };
        let mut problem = Problem::new(&tracklets, scene.intrinsics.clone(), params);
        problem.frames = 4;

        let mut labeling = Labeling::all_outliers(tracklets.len());
        let mut ids = Vec::new();
        for body in 0..truth.bodies.len().min(3) {
            let poses = (0..4).map(|k| Some(truth.hypothesis(body, k, 0))).collect();
            ids.push(labeling.add_label(poses));
        }
        for (i, slot) in labeling.assignment.iter_mut().enumerate() {
            let c = start[i % start.len()];
            *slot = ids.get(c).map_or(Slot::Outlier, |id| Slot::Label(*id));
        }
        let before = total_energy(&labeling, &problem).total;
        let after = assign_labels(&labeling, Vec::new(), &problem, &mut ResidualCache::new());
        let after = total_energy(&after, &problem).total;
        prop_assert!(after <= before + 1e-9 * before.abs().max(1.0), "{before} -> {after}");
    }

    /// Gauss-Newton with step control never ends above its starting cost.
    #[test]
    fn batch_cost_never_increases(jitter in prop::collection::vec(twist(0.05), 3), noise in prop::collection::vec(vec3(0.2), 12)) {
        let cam = StereoIntrinsics::default();
        let truth_poses: Vec<Pose> = (0..4)
            .map(|k| Pose::exp(&Twist::new(Vec3::new(0.05 * k as f64, 0.0, 0.02 * k as f64), Vec3::new(0.0, 0.02 * k as f64, 0.0))))
            .collect();
        let points: Vec<Vec3> = (0..12)
            .map(|i| Vec3::new((i % 4) as f64 * 0.4 - 0.6, (i / 4) as f64 * 0.4 - 0.4, 4.0 + (i % 3) as f64))
            .collect();
        let mut obs = Vec::new();
        for (k, t) in truth_poses.iter().enumerate() {
            for (j, p) in points.iter().enumerate() {
                let stereo = cam.project(&t.transform(p)).unwrap();
                obs.push(BatchObservation { landmark: j, frame: k, stereo });
            }
        }
        let mut initial = BatchState { poses: Default::default(), landmarks: Vec::new() };
        for (k, t) in truth_poses.iter().enumerate() {
            let pose = if k == 0 { *t } else { Pose::exp(&jitter[k - 1]) * *t };
            initial.poses.insert(k, pose);
        }
        initial.landmarks = points.iter().zip(&noise).map(|(p, n)| p + n).collect();
        let (_, report) = solve(&cam, &obs, initial, &BatchOptions::default()).unwrap();
        prop_assert!(report.final_cost <= report.initial_cost);
        prop_assert!(report.final_cost < 1e-8, "cost {}", report.final_cost);
    }
}

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use synergy_kit::grasp::{
    contact_forces, grasp_matrix, internal_force_basis, is_force_closure, MarginCost,
};
use synergy_kit::hand::HandModelFile;
use synergy_kit::linalg;
use synergy_kit::object::{
    contact_velocities, motion_transfer_matrix, object_to_via_points, plan_contacts,
};
use synergy_kit::pipeline::config::{GraspConfig, PipelineConfig};
use synergy_kit::pipeline::grasp_eval::load_wrench;
use synergy_kit::pipeline::train::{train_synthetic, TrainedModels};
use synergy_kit::synergy::extract_from_configs;
use synergy_kit::traj::{
    fit_gmm, gmr, prioritized_merge, PrioritizedTask, ReferencePoint, ReferenceTrajectory,
};
use synergy_kit::{
    BuiltinHand, ContactAssignment, ContactPoint, FrictionPyramid, HandModel, JointConfig,
    ObjectPrimitive, Shape, SoftSynergyGrasp,
};

fn hand(which: BuiltinHand) -> &'static HandModel {
    static ANTHRO: OnceLock<HandModel> = OnceLock::new();
    static THREE: OnceLock<HandModel> = OnceLock::new();
    match which {
        BuiltinHand::Anthropomorphic20Dof => ANTHRO.get_or_init(|| HandModel::builtin(which)),
        BuiltinHand::ThreeFinger4Dof => THREE.get_or_init(|| HandModel::builtin(which)),
    }
}

fn three_finger_models() -> &'static TrainedModels {
    static MODELS: OnceLock<TrainedModels> = OnceLock::new();
    MODELS.get_or_init(|| {
        let cfg = PipelineConfig::default();
        train_synthetic(hand(BuiltinHand::ThreeFinger4Dof), &cfg).unwrap()
    })
}

fn any_hand() -> impl Strategy<Value = BuiltinHand> {
    prop_oneof![
        Just(BuiltinHand::Anthropomorphic20Dof),
        Just(BuiltinHand::ThreeFinger4Dof)
    ]
}

fn random_posture(hand: &HandModel, rng: &mut ChaCha8Rng) -> JointConfig {
    let theta = hand
        .limits()
        .iter()
        .map(|[lo, hi]| rng.random_range(*lo..=*hi))
        .collect::<Vec<_>>();
    JointConfig::new(DVector::from_vec(theta))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(gaussian(rng), gaussian(rng), gaussian(rng));
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

/// Contacts on a sphere of radius `r` about the origin with inward normals.
fn sphere_contacts(n: usize, r: f64, rng: &mut ChaCha8Rng) -> Vec<ContactPoint> {
    (0..n)
        .map(|_| {
            let u = random_unit(rng);
            ContactPoint::new(u * r, -u, 0.5).unwrap()
        })
        .collect()
}

/// Low-rank joint data with isotropic noise.
fn low_rank_configs(n_q: usize, k: usize, rank: usize, seed: u64) -> Vec<JointConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = DMatrix::from_fn(n_q, rank, |_, _| gaussian(&mut rng));
    (0..k)
        .map(|_| {
            let z = DVector::from_fn(rank, |i, _| gaussian(&mut rng) / (1.0 + i as f64));
            let noise = DVector::from_fn(n_q, |_, _| 0.01 * gaussian(&mut rng));
            JointConfig::new(&mix * z + noise)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jacobian_matches_finite_differences(which in any_hand(), seed in any::<u64>()) {
        let hand = hand(which);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_posture(hand, &mut rng);
        let fingers: Vec<usize> = (0..hand.fingers().len()).collect();
        let sites = ContactAssignment::fingertips(hand, &fingers).unwrap();
        let j = hand.jacobian(&q, &sites).unwrap();
        let h = 1e-6;
        for k in 0..hand.n_q() {
            let mut plus = q.theta.clone();
            let mut minus = q.theta.clone();
            plus[k] += h;
            minus[k] -= h;
            let p = hand.contact_positions(&JointConfig::new(plus), &sites).unwrap();
            let m = hand.contact_positions(&JointConfig::new(minus), &sites).unwrap();
            for (i, (a, b)) in p.iter().zip(&m).enumerate() {
                let fd = (a - b) / (2.0 * h);
                for r in 0..3 {
                    prop_assert!((fd[r] - j[(3 * i + r, k)]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn coupling_keeps_actuated_joints_in_limits(which in any_hand(), seed in any::<u64>()) {
        let hand = hand(which);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q_dof = DVector::from_vec(
            hand.dof_limits()
                .iter()
                .map(|[lo, hi]| rng.random_range(*lo..=*hi))
                .collect(),
        );
        let q = hand.actuate(&q_dof).unwrap();
        for (v, [lo, hi]) in q.theta.iter().zip(hand.limits()) {
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    #[test]
    fn translating_the_base_translates_every_contact(
        which in any_hand(),
        seed in any::<u64>(),
        shift in prop::array::uniform3(-0.5f64..0.5),
    ) {
        let hand = hand(which);
        let mut file: HandModelFile = hand.to_file();
        for f in &mut file.fingers {
            for (p, s) in f.base_frame.pos.iter_mut().zip(shift) {
                *p += s;
            }
        }
        let moved = HandModel::from_file(&file).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_posture(hand, &mut rng);
        let fingers: Vec<usize> = (0..hand.fingers().len()).collect();
        let sites = ContactAssignment::fingertips(hand, &fingers).unwrap();
        let before = hand.contact_positions(&q, &sites).unwrap();
        let after = moved.contact_positions(&q, &sites).unwrap();
        let v = Vector3::from(shift);
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((b - a - v).amax() < 1e-12);
        }
    }

    #[test]
    fn synergy_extraction_invariants(
        n_q in 3usize..12,
        rank in 1usize..4,
        extra in 1usize..40,
        threshold in 0.5f64..0.99,
        seed in any::<u64>(),
    ) {
        let configs = low_rank_configs(n_q, n_q + extra, rank, seed);
        let refs: Vec<&JointConfig> = configs.iter().collect();
        let model = extract_from_configs(&refs, threshold).unwrap();
        let n_s = model.n_s();
        let basis = model.basis();

        let gram = basis.transpose() * basis;
        prop_assert!((gram - DMatrix::identity(n_s, n_s)).amax() < 1e-9);

        let eig = model.eigenvalues();
        prop_assert!(eig.as_slice().windows(2).all(|w| w[0] >= w[1]));
        let total: f64 = eig.iter().sum();
        let head: f64 = eig.iter().take(n_s).sum();
        let below: f64 = eig.iter().take(n_s - 1).sum();
        prop_assert!(below / total <= threshold);
        prop_assert!(threshold < head / total + 1e-12);

        for col in basis.column_iter() {
            let max = col.amax();
            let first = col.iter().find(|v| v.abs() > 1e-12 * max).unwrap();
            prop_assert!(*first > 0.0);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let e = DVector::from_fn(n_s, |_, _| gaussian(&mut rng));
        let back = model.project(&model.reconstruct(&e).unwrap()).unwrap();
        prop_assert!((back - &e).amax() < 1e-10 * (1.0 + e.amax()));
    }

    #[test]
    fn margin_cost_never_increases_with_margin(
        p in 0.05f64..5.0,
        a in -10.0f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let cost = MarginCost::new(p).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        // the upper branch is only defined for positive margins
        prop_assume!(hi < p || lo >= p);
        prop_assert!(cost.value(hi) <= cost.value(lo));
        prop_assert!(cost.derivative(lo) <= 0.0);
        prop_assert!(cost.derivative(hi) <= 0.0);
    }

    #[test]
    fn motion_transfer_gives_rigid_body_velocities(
        seed in any::<u64>(),
        n in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let origin = Vector3::new(gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng));
        let positions: Vec<Vector3<f64>> = (0..n)
            .map(|_| origin + random_unit(&mut rng) * rng.random_range(0.01..0.2))
            .collect();
        let v = random_unit(&mut rng);
        let w = random_unit(&mut rng) * 2.0;
        let motion = DVector::from_vec(vec![v.x, v.y, v.z, w.x, w.y, w.z, 0.0]);
        let a_m = motion_transfer_matrix(&origin, &positions);
        let got = contact_velocities(&a_m, &motion).unwrap();
        for (i, p) in positions.iter().enumerate() {
            let rigid = v + w.cross(&(p - origin));
            for r in 0..3 {
                prop_assert!((got[3 * i + r] - rigid[r]).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_never_lowers_the_likelihood_and_is_deterministic(
        k in 1usize..5,
        n in 60usize..200,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<DVector<f64>> = (0..n)
            .map(|_| {
                let t: f64 = rng.random_range(0.0..1.0);
                let e1 = (6.0 * t).sin() + 0.05 * gaussian(&mut rng);
                let e2 = t * t - 0.3 * t + 0.05 * gaussian(&mut rng);
                DVector::from_vec(vec![t, e1, e2])
            })
            .collect();
        let fit = fit_gmm(&samples, k, seed).unwrap();
        for w in fit.log_likelihood.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        let again = fit_gmm(&samples, k, seed).unwrap();
        prop_assert_eq!(again.model, fit.model.clone());

        for i in 0..=20 {
            let t = -0.25 + 1.5 * i as f64 / 20.0;
            let (_, cov) = gmr(&fit.model, t).unwrap();
            prop_assert!(linalg::is_spd(&cov));
        }
    }

    #[test]
    fn single_full_priority_merge_is_identity(
        n in 2usize..30,
        n_s in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|i| {
                let a = DMatrix::from_fn(n_s, n_s, |_, _| gaussian(&mut rng));
                ReferencePoint {
                    t: i as f64 / (n - 1) as f64,
                    mean: DVector::from_fn(n_s, |_, _| gaussian(&mut rng)),
                    cov: &a * a.transpose() + DMatrix::identity(n_s, n_s) * 0.1,
                }
            })
            .collect();
        let reference = ReferenceTrajectory::new(points).unwrap();
        let merged = prioritized_merge(&[PrioritizedTask::uniform(reference.clone(), 1.0)]).unwrap();
        prop_assert_eq!(merged, reference);
    }

    #[test]
    fn contact_forces_balance_any_resistible_wrench(
        n in 2usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let contacts = sphere_contacts(n, rng.random_range(0.01..0.1), &mut rng);
        let g = grasp_matrix(&Vector3::zeros(), &contacts);
        let f = DVector::from_fn(3 * n, |_, _| gaussian(&mut rng));
        let wrench = &g * f;
        let xi = internal_force_basis(&g);
        let y = DVector::from_fn(xi.ncols(), |_, _| gaussian(&mut rng));
        let fc = contact_forces(&g, &wrench, &xi, &y).unwrap();
        prop_assert!((&g * &fc - &wrench).norm() < 1e-9 * (1.0 + wrench.norm()));
        let internal = &xi * &y;
        prop_assert!((&g * &internal).amax() < 1e-12 * (1.0 + internal.amax()));
    }
}

/// A planned three-finger sphere grasp with `n` contacts.
fn planned_grasp(n: usize, radius: f64) -> Option<(SoftSynergyGrasp, GraspConfig)> {
    let hand = hand(BuiltinHand::ThreeFinger4Dof);
    let models = three_finger_models();
    let cfg = GraspConfig::default();
    let ball = ObjectPrimitive::at_origin(Shape::Sphere { radius }, 0.1).unwrap();
    let plan = plan_contacts(hand, &ball, n, cfg.mu_f).ok()?;
    let wrench = load_wrench(&plan.object, cfg.gravity, None);
    let grasp = SoftSynergyGrasp::new(
        hand,
        models.synergy.basis(),
        &plan.posture,
        &plan.assignment,
        plan.contacts.clone(),
        &plan.object.center(),
        &wrench,
        &cfg.params().unwrap(),
    )
    .ok()?;
    Some((grasp, cfg))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synergy_squeeze_adds_no_net_wrench(
        radius in 0.025f64..0.045,
        offset in prop::collection::vec(-0.5f64..0.5, 2),
    ) {
        let (grasp, _) = planned_grasp(3, radius).expect("reachable sphere");
        let g = grasp.grasp_matrix();
        let offset = DVector::from_vec(offset[..grasp.n_s()].to_vec());
        let squeeze = grasp.forces(&offset) - grasp.forces(&DVector::zeros(grasp.n_s()));
        prop_assert!((g * &squeeze).amax() < 1e-12 * (1.0 + squeeze.amax()));
    }

    #[test]
    fn planner_normals_point_into_the_object(
        radius in 0.02f64..0.045,
        n in 2usize..4,
    ) {
        let hand = hand(BuiltinHand::ThreeFinger4Dof);
        let ball = ObjectPrimitive::at_origin(Shape::Sphere { radius }, 0.1).unwrap();
        let plan = plan_contacts(hand, &ball, n, 0.5).unwrap();
        for c in &plan.contacts {
            prop_assert!(c.normal.dot(&plan.object.outward_normal(&c.position)) < 0.0);
        }
    }

    #[test]
    fn without_closure_descent_never_reports_success(radius in 0.025f64..0.045, n in 1usize..3) {
        let (grasp, cfg) = planned_grasp(n, radius).expect("reachable sphere");
        let g = grasp.grasp_matrix();
        let closure = is_force_closure(g, grasp.contacts(), &FrictionPyramid::new(cfg.n_edges, cfg.p).unwrap()).unwrap();
        prop_assert!(!closure);
        let result = grasp.descend(&DVector::zeros(grasp.n_s()), &cfg.descent()).unwrap();
        prop_assert!(!result.success);
        prop_assert!(!result.report.force_closure);
    }

    #[test]
    fn larger_spheres_need_less_closure(r1 in 0.02f64..0.045, r2 in 0.02f64..0.045) {
        let hand = hand(BuiltinHand::ThreeFinger4Dof);
        let models = three_finger_models();
        let closure = |r: f64| {
            let ball = ObjectPrimitive::at_origin(Shape::Sphere { radius: r }, 0.1).unwrap();
            let a = object_to_via_points(hand, &models.synergy, &ball, 3, 0.5).unwrap();
            let b = object_to_via_points(hand, &models.synergy, &ball, 3, 0.5).unwrap();
            assert_eq!(a.via_points, b.via_points);
            (&a.e_grasp - &a.e_open).norm()
        };
        let (small, large) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        // bisection tolerance on the closure coefficient
        prop_assert!(closure(large) <= closure(small) + 1e-4);
    }
}

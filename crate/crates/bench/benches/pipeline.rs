use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use synergy_kit::object::object_to_via_points;
use synergy_kit::pipeline::config::{DemoConfig, GraspConfig, PipelineConfig};
use synergy_kit::pipeline::demo::{generate_demos, training_objects};
use synergy_kit::pipeline::fixtures;
use synergy_kit::pipeline::grasp_eval::{grasp_eval, ContactRequest, GraspScenario};
use synergy_kit::pipeline::train::{synergy_samples, train_synthetic};
use synergy_kit::traj::{fit_gmm, kmp_adapt, DEFAULT_COMPONENTS};
use synergy_kit::{extract_synergies, simulate, BuiltinHand, HandModel, ObjectPrimitive, Shape};

fn learning(c: &mut Criterion) {
    let hand = HandModel::builtin(BuiltinHand::Anthropomorphic20Dof);
    let demos = generate_demos(&hand, &training_objects(), &DemoConfig::default(), 7).unwrap();
    let synergy = extract_synergies(&demos, 0.85).unwrap();
    let samples = synergy_samples(&demos, &synergy, None).unwrap();

    c.bench_function("demo_generate_20dof", |b| {
        b.iter(|| generate_demos(&hand, &training_objects(), &DemoConfig::default(), 7).unwrap())
    });
    c.bench_function("extract_synergies_20dof", |b| {
        b.iter(|| extract_synergies(black_box(&demos), 0.85).unwrap())
    });
    c.bench_function("fit_gmm_5", |b| {
        b.iter(|| fit_gmm(black_box(&samples), DEFAULT_COMPONENTS, 7).unwrap())
    });
}

fn adaptation(c: &mut Criterion) {
    let hand = HandModel::builtin(BuiltinHand::ThreeFinger4Dof);
    let models = train_synthetic(&hand, &PipelineConfig::default()).unwrap();
    let ball = ObjectPrimitive::at_origin(Shape::Sphere { radius: 0.035 }, 0.1).unwrap();
    let adapted = object_to_via_points(&hand, &models.synergy, &ball, 3, 0.5).unwrap();

    c.bench_function("object_to_via_points_sphere", |b| {
        b.iter(|| object_to_via_points(&hand, &models.synergy, black_box(&ball), 3, 0.5).unwrap())
    });
    c.bench_function("kmp_adapt_and_factor", |b| {
        b.iter(|| {
            kmp_adapt(&models.kmp, black_box(&adapted.via_points))
                .unwrap()
                .predictor()
                .unwrap()
        })
    });
    let predictor = models.kmp.predictor().unwrap();
    c.bench_function("kmp_predict", |b| {
        b.iter(|| predictor.predict(black_box(0.37)).unwrap())
    });
}

fn grasping(c: &mut Criterion) {
    let hand = HandModel::builtin(BuiltinHand::ThreeFinger4Dof);
    let models = train_synthetic(&hand, &PipelineConfig::default()).unwrap();
    let basis = models.synergy.basis();
    let cube = ObjectPrimitive::at_origin(
        Shape::Box {
            width: 0.05,
            depth: 0.05,
            height: 0.05,
        },
        0.1,
    )
    .unwrap();
    let scenario = GraspScenario::new(&cube, ContactRequest::Count(3));
    let cfg = GraspConfig::default();

    c.bench_function("grasp_eval_tripod_cube", |b| {
        b.iter(|| grasp_eval(&hand, basis, black_box(&scenario), &cfg, false).unwrap())
    });
    c.bench_function("grasp_descent_tripod_cube", |b| {
        b.iter(|| grasp_eval(&hand, basis, black_box(&scenario), &cfg, true).unwrap())
    });

    let spec = fixtures::builtin("sphere-grasp").unwrap();
    let run_cfg = spec.config(&PipelineConfig::default()).unwrap();
    let run_hand = HandModel::resolve(&run_cfg.hand).unwrap();
    let run_models = train_synthetic(&run_hand, &run_cfg).unwrap();
    c.bench_function("simulate_sphere_grasp", |b| {
        b.iter(|| simulate(black_box(&spec), &run_hand, &run_models, &run_cfg).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = learning, adaptation, grasping
}
criterion_main!(benches);

//! Scripted desk-scale scenarios built on the published task coefficients.

use serde_json::Value;

use super::grasp_eval::ContactRequest;
use super::scenario::{Phase, Ramp, ScenarioSpec, TaskSpec, SCENARIO_SCHEMA_VERSION};
use crate::object::{ObjectFile, ObjectPrimitive, Shape};

pub const FIXTURE_NAMES: [&str; 7] = [
    "pour",
    "jar",
    "latch",
    "prioritized",
    "carrom-push",
    "tripod-cube",
    "sphere-grasp",
];

fn object(shape: Shape, mass: f64) -> ObjectFile {
    ObjectPrimitive::at_origin(shape, mass)
        .expect("fixture object is valid")
        .to_file()
}

fn ramp(from: [f64; 2], to: [f64; 2]) -> Option<Ramp> {
    Some(Ramp {
        from: from.to_vec(),
        to: to.to_vec(),
    })
}

fn manipulate(label: &str, from: [f64; 2], to: [f64; 2]) -> Phase {
    Phase::Manipulate {
        label: Some(label.into()),
        goal: None,
        ramp: ramp(from, to),
        steps: Some(8),
    }
}

fn grasp(object: usize) -> Phase {
    Phase::Grasp {
        object,
        contacts: Some(ContactRequest::Count(3)),
        wrench: None,
    }
}

fn spec(name: &str, hand: &str, objects: Vec<ObjectFile>, phases: Vec<Phase>) -> ScenarioSpec {
    ScenarioSpec {
        schema_version: SCENARIO_SCHEMA_VERSION,
        name: name.into(),
        hand: Some(hand.into()),
        seed: Some(7),
        objects,
        phases,
        config: Value::Null,
    }
}

/// Hold a cup, tilt it to pour and tilt it back.
pub fn pour() -> ScenarioSpec {
    spec(
        "pour",
        "anthropomorphic_20dof",
        vec![object(
            Shape::Cylinder {
                radius: 0.035,
                height: 0.1,
            },
            0.05,
        )],
        vec![
            grasp(0),
            manipulate("pour", [0.47, 0.18], [0.54, 0.27]),
            manipulate("return", [0.54, 0.27], [0.47, 0.18]),
            Phase::Release { steps: Some(8) },
        ],
    )
}

/// Twist a jar lid.
pub fn jar() -> ScenarioSpec {
    spec(
        "jar",
        "anthropomorphic_20dof",
        vec![object(
            Shape::Cylinder {
                radius: 0.04,
                height: 0.04,
            },
            0.05,
        )],
        vec![
            grasp(0),
            manipulate("twist", [-0.31, 0.17], [-0.39, 0.21]),
            Phase::Release { steps: Some(8) },
        ],
    )
}

/// Slide a toolbox latch open.
pub fn latch() -> ScenarioSpec {
    spec(
        "latch",
        "anthropomorphic_20dof",
        vec![object(
            Shape::Box {
                width: 0.03,
                depth: 0.06,
                height: 0.02,
            },
            0.05,
        )],
        vec![
            grasp(0),
            manipulate("slide", [0.16, -0.17], [0.23, -0.05]),
            Phase::Release { steps: Some(8) },
        ],
    )
}

/// Little and ring finger keep their hold while a tripod grasps and moves a small ball.
pub fn prioritized() -> ScenarioSpec {
    let tasks = vec![
        TaskSpec {
            name: "hold".into(),
            fingers: vec!["little".into(), "ring".into()],
            priority: 0.5,
            hold: Some(vec![-0.04, 0.05]),
            object: None,
            ramp: None,
        },
        TaskSpec {
            name: "tripod".into(),
            fingers: vec!["thumb".into(), "index".into(), "middle".into()],
            priority: 0.5,
            hold: None,
            object: Some(0),
            ramp: ramp([-0.02, 0.25], [0.11, 0.36]),
        },
    ];
    spec(
        "prioritized",
        "anthropomorphic_20dof",
        vec![object(Shape::Sphere { radius: 0.02 }, 0.02)],
        vec![
            Phase::Prioritized {
                tasks,
                steps: Some(8),
            },
            Phase::Release { steps: Some(8) },
        ],
    )
}

/// Pinch a carrom striker against a pushing load, wind up and flick.
pub fn carrom_push() -> ScenarioSpec {
    spec(
        "carrom-push",
        "anthropomorphic_20dof",
        vec![object(
            Shape::Cylinder {
                radius: 0.021,
                height: 0.008,
            },
            0.015,
        )],
        vec![
            Phase::Grasp {
                object: 0,
                contacts: Some(ContactRequest::Count(3)),
                wrench: Some([1.25, 0.0, 0.0, 0.0, 0.0, 0.0]),
            },
            manipulate("wind-up", [0.51, 0.05], [0.59, -0.08]),
            manipulate("push", [0.1, -0.04], [-0.07, 0.08]),
            Phase::Release { steps: Some(8) },
        ],
    )
}

/// Three-fingertip grasp of a 50 mm cube.
pub fn tripod_cube() -> ScenarioSpec {
    spec(
        "tripod-cube",
        "anthropomorphic_20dof",
        vec![object(
            Shape::Box {
                width: 0.05,
                depth: 0.05,
                height: 0.05,
            },
            0.1,
        )],
        vec![grasp(0)],
    )
}

/// Grasp-only scenario on a sphere.
pub fn sphere_grasp(hand: &str, radius: f64) -> ScenarioSpec {
    spec(
        "sphere-grasp",
        hand,
        vec![object(Shape::Sphere { radius }, 0.1)],
        vec![grasp(0)],
    )
}

/// Built-in scenario by name.
pub fn builtin(name: &str) -> Option<ScenarioSpec> {
    Some(match name {
        "pour" => pour(),
        "jar" => jar(),
        "latch" => latch(),
        "prioritized" => prioritized(),
        "carrom-push" => carrom_push(),
        "tripod-cube" => tripod_cube(),
        "sphere-grasp" => sphere_grasp("three_finger_4dof", 0.035),
        _ => return None,
    })
}

//! Postural synergies for multi-finger hands, kernelized movement primitives over synergy
//! coefficients, and force-closure grasp quality.
//!
//! The pipeline learns a low-dimensional synergy subspace from joint-space demonstrations,
//! encodes the coefficient trajectories with a Gaussian mixture, regresses a reference
//! trajectory, and adapts it to new objects through kernelized via-point insertion. Grasp
//! stability is scored by a friction-cone margin cost that is descended in synergy space.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grasp;
pub mod hand;
pub mod linalg;
pub mod object;
pub mod pipeline;
pub mod synergy;
pub mod traj;

pub use error::{Error, Result};
pub use grasp::{
    ContactPoint, DescentConfig, DescentResult, FrictionPyramid, GraspParams, QualityReport,
    SoftSynergyGrasp,
};
pub use hand::{
    BuiltinHand, ContactAssignment, ContactFrame, ContactSite, FingerChain, HandModel, JointConfig,
    Link,
};
pub use object::{GoalKind, ManipulationGoal, ObjectPrimitive, Shape};
pub use pipeline::config::PipelineConfig;
pub use pipeline::scenario::{simulate, RunTrace, ScenarioSpec, Status};
pub use synergy::{extract_synergies, Demonstration, DemonstrationSet, SynergyModel};
pub use traj::{GmmModel, KmpModel, ReferenceTrajectory, ViaPoint};

//! End-to-end orchestration: synthetic demonstrations, training, adaptation, grasp evaluation
//! and scenario simulation.

pub mod config;
pub mod demo;
pub mod fixtures;
pub mod grasp_eval;
pub mod io;
pub mod scenario;
pub mod train;

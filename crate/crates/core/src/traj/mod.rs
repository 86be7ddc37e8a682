//! Probabilistic trajectory learning over synergy coefficients: GMM/GMR reference
//! distributions, kernelized movement primitives with via points, and priority merging.

pub mod gmm;
pub mod gmr;
pub mod kmp;
pub mod merge;

pub use gmm::{fit_gmm, GaussianComponent, GmmFile, GmmFit, GmmModel, DEFAULT_COMPONENTS};
pub use gmr::{build_reference, gmr, uniform_grid, ReferencePoint, ReferenceTrajectory};
pub use kmp::{
    kmp_adapt, kmp_predict, KmpFile, KmpModel, KmpPredictor, SeKernel, ViaPoint, ViaPointEntry,
    ViaPointFile, DEFAULT_LAMBDA, VIA_COVARIANCE,
};
pub use merge::{prioritized_merge, PrioritizedTask};

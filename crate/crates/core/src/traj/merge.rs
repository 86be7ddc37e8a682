use nalgebra::{DMatrix, DVector};

use super::gmr::{ReferencePoint, ReferenceTrajectory};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg;

const PRIORITY_SUM_TOL: f64 = 1e-9;
const TIME_TOL: f64 = 1e-12;

/// Reference distribution with one priority per reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct PrioritizedTask {
    pub reference: ReferenceTrajectory,
    pub priorities: Vec<f64>,
}

impl PrioritizedTask {
    pub fn uniform(reference: ReferenceTrajectory, priority: f64) -> Self {
        let priorities = vec![priority; reference.len()];
        Self {
            reference,
            priorities,
        }
    }
}

/// Priority-weighted product of the task distributions at each shared time.
pub fn prioritized_merge(tasks: &[PrioritizedTask]) -> Result<ReferenceTrajectory> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::InvalidInput("nothing to merge".into()))?;
    let n = first.reference.len();
    let n_s = first.reference.n_s();
    let single = tasks.len() == 1;
    for task in tasks {
        ensure_dim("task reference length", n, task.reference.len())?;
        ensure_dim("task priorities", n, task.priorities.len())?;
        ensure_dim("task synergy dimension", n_s, task.reference.n_s())?;
        for (p, q) in task.reference.points().iter().zip(first.reference.points()) {
            if (p.t - q.t).abs() > TIME_TOL {
                return Err(Error::InvalidInput("tasks must share one time grid".into()));
            }
        }
        for &u in &task.priorities {
            let valid = if single {
                u > 0.0 && u <= 1.0
            } else {
                u > 0.0 && u < 1.0
            };
            if !valid {
                return Err(Error::InvalidInput(format!(
                    "priority {u} outside the admissible range"
                )));
            }
        }
    }

    let mut points = Vec::with_capacity(n);
    for idx in 0..n {
        let sum: f64 = tasks.iter().map(|t| t.priorities[idx]).sum();
        if (sum - 1.0).abs() > PRIORITY_SUM_TOL {
            return Err(Error::PrioritySum { index: idx, sum });
        }
        let here: Vec<&ReferencePoint> = tasks.iter().map(|t| &t.reference.points()[idx]).collect();
        // a product of identical Gaussians with weights summing to one is that Gaussian
        if here
            .iter()
            .all(|p| p.mean == here[0].mean && p.cov == here[0].cov)
        {
            points.push(here[0].clone());
            continue;
        }
        let mut precision = DMatrix::zeros(n_s, n_s);
        let mut info = DVector::zeros(n_s);
        for (task, p) in tasks.iter().zip(&here) {
            let inv = linalg::cholesky(&p.cov, "task covariance")?.inverse();
            let u = task.priorities[idx];
            info += &inv * &p.mean * u;
            precision += inv * u;
        }
        let chol = linalg::cholesky(&linalg::symmetrize(&precision), "merged precision")?;
        let cov = linalg::symmetrize(&chol.inverse());
        points.push(ReferencePoint {
            t: here[0].t,
            mean: chol.solve(&info),
            cov,
        });
    }
    ReferenceTrajectory::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(means: &[[f64; 2]], var: f64) -> ReferenceTrajectory {
        ReferenceTrajectory::new(
            means
                .iter()
                .enumerate()
                .map(|(i, m)| ReferencePoint {
                    t: i as f64 * 0.1,
                    mean: DVector::from_row_slice(m),
                    cov: DMatrix::from_row_slice(2, 2, &[var, 0.2 * var, 0.2 * var, var]),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_tasks_reproduce_input() {
        let r = traj(&[[0.1, 0.2], [0.3, -0.4], [0.0, 1.0]], 0.05);
        let m = prioritized_merge(&[
            PrioritizedTask::uniform(r.clone(), 0.5),
            PrioritizedTask::uniform(r.clone(), 0.5),
        ])
        .unwrap();
        assert_eq!(m, r);
        assert_eq!(
            prioritized_merge(&[PrioritizedTask::uniform(r.clone(), 1.0)]).unwrap(),
            r
        );
    }

    #[test]
    fn dominant_priority_wins() {
        let a = traj(&[[0.1, 0.2], [0.3, -0.4]], 0.05);
        let b = traj(&[[1.0, -1.0], [2.0, 0.5]], 0.07);
        let m = prioritized_merge(&[
            PrioritizedTask::uniform(a.clone(), 1.0 - 1e-6),
            PrioritizedTask::uniform(b, 1e-6),
        ])
        .unwrap();
        for (p, q) in m.points().iter().zip(a.points()) {
            assert!((&p.mean - &q.mean).amax() < 1e-4);
        }
    }

    #[test]
    fn weighted_product_matches_scalar_formula() {
        let a = traj(&[[0.0, 0.0]], 0.1);
        let b = traj(&[[1.0, 1.0]], 0.1);
        let m = prioritized_merge(&[
            PrioritizedTask::uniform(a, 0.25),
            PrioritizedTask::uniform(b, 0.75),
        ])
        .unwrap();
        // equal covariances: the mean is the priority-weighted average
        assert!((&m.points()[0].mean - DVector::from_element(2, 0.75)).amax() < 1e-12);
    }

    #[test]
    fn bad_priorities_rejected() {
        let r = traj(&[[0.1, 0.2]], 0.05);
        let err = prioritized_merge(&[
            PrioritizedTask::uniform(r.clone(), 0.6),
            PrioritizedTask::uniform(r.clone(), 0.6),
        ]);
        assert!(matches!(err, Err(Error::PrioritySum { .. })));
        let err = prioritized_merge(&[
            PrioritizedTask::uniform(r.clone(), 1.0),
            PrioritizedTask::uniform(r, 0.0),
        ]);
        assert!(err.is_err());
    }
}

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::gmm::{log_sum_exp, row_major, GmmModel};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg;

const SPD_FLOOR: f64 = 1e-10;

/// Conditional mean and covariance of the outputs given time, by moment matching.
pub fn gmr(gmm: &GmmModel, t: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !t.is_finite() {
        return Err(Error::NonFinite("query time"));
    }
    let comps = gmm.components();
    let n_s = gmm.n_s();
    let logs: Vec<f64> = comps
        .iter()
        .map(|c| {
            let var = c.cov_tt();
            let d = t - c.mean_t();
            c.weight.ln() - 0.5 * (d * d / var + var.ln() + std::f64::consts::TAU.ln())
        })
        .collect();
    let lse = log_sum_exp(&logs);

    let mut mean = DVector::zeros(n_s);
    let mut second = DMatrix::zeros(n_s, n_s);
    for (c, l) in comps.iter().zip(&logs) {
        let h = (l - lse).exp();
        let cov_et = c.cov_et();
        let m = c.mean_e() + &cov_et * ((t - c.mean_t()) / c.cov_tt());
        let cond = c.cov_ee() - &cov_et * cov_et.transpose() / c.cov_tt();
        second += (cond + &m * m.transpose()) * h;
        mean += m * h;
    }
    let cov = second - &mean * mean.transpose();
    Ok((mean, linalg::spd_floor(&cov, SPD_FLOOR)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint {
    pub t: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Time-indexed Gaussian reference over synergy coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    points: Vec<ReferencePoint>,
}

impl ReferenceTrajectory {
    pub fn new(points: Vec<ReferencePoint>) -> Result<Self> {
        let n_s = points
            .first()
            .map(|p| p.mean.len())
            .ok_or_else(|| Error::InvalidInput("reference trajectory is empty".into()))?;
        let mut prev = f64::NEG_INFINITY;
        for p in &points {
            ensure_dim("reference mean", n_s, p.mean.len())?;
            ensure_dim("reference covariance rows", n_s, p.cov.nrows())?;
            ensure_dim("reference covariance cols", n_s, p.cov.ncols())?;
            if !p.t.is_finite() || p.t <= prev {
                return Err(Error::InvalidInput(
                    "reference times must be strictly increasing".into(),
                ));
            }
            if !linalg::is_spd(&p.cov) {
                return Err(Error::NotPositiveDefinite(format!(
                    "reference covariance at t={}",
                    p.t
                )));
            }
            prev = p.t;
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[ReferencePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_s(&self) -> usize {
        self.points[0].mean.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    /// Smallest gap between consecutive times, infinite for a single point.
    pub fn min_spacing(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1].t - w[0].t)
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV with header `t,mu_1..mu_ns,sigma_1_1..` (covariance row-major).
    pub fn to_csv(&self) -> String {
        let n = self.n_s();
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",mu_{i}");
        }
        for i in 1..=n {
            for j in 1..=n {
                let _ = write!(out, ",sigma_{i}_{j}");
            }
        }
        out.push('\n');
        for p in &self.points {
            let _ = write!(out, "{}", p.t);
            for v in p.mean.iter().chain(row_major(&p.cov).iter()) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            reason: "missing header".into(),
        })?;
        let cols = header.split(',').count();
        let n = (1..16)
            .find(|n| 1 + n + n * n == cols)
            .ok_or(Error::Parse {
                line: 1,
                reason: format!("{cols} columns does not match t,mu..,sigma.. layout"),
            })?;
        let mut points = Vec::new();
        for (idx, line) in lines {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            if vals.len() != cols {
                return Err(Error::Parse {
                    line: idx + 1,
                    reason: format!("expected {cols} fields"),
                });
            }
            points.push(ReferencePoint {
                t: vals[0],
                mean: DVector::from_column_slice(&vals[1..1 + n]),
                cov: DMatrix::from_row_slice(n, n, &vals[1 + n..]),
            });
        }
        Self::new(points)
    }
}

/// GMR evaluated on a strictly increasing grid in [0, 1].
pub fn build_reference(gmm: &GmmModel, grid: &[f64]) -> Result<ReferenceTrajectory> {
    if grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidInput(
            "reference grid must lie in [0, 1]".into(),
        ));
    }
    let points = grid
        .iter()
        .map(|&t| {
            let (mean, cov) = gmr(gmm, t)?;
            Ok(ReferencePoint { t, mean, cov })
        })
        .collect::<Result<Vec<_>>>()?;
    ReferenceTrajectory::new(points)
}

/// `n` evenly spaced times covering [0, 1].
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::gmm::GaussianComponent;

    fn single(mean: &[f64], cov: &[f64]) -> GmmModel {
        let d = mean.len();
        GmmModel::new(vec![GaussianComponent::new(
            1.0,
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(d, d, cov),
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn single_component_matches_conditioning() {
        let g = single(
            &[0.5, 1.0, -1.0],
            &[0.04, 0.01, -0.006, 0.01, 0.09, 0.002, -0.006, 0.002, 0.05],
        );
        for &t in &[0.0, 0.3, 0.9, 2.0] {
            let (m, c) = gmr(&g, t).unwrap();
            // block partition written out by hand
            let s_tt = 0.04;
            let s_et = DVector::from_vec(vec![0.01, -0.006]);
            let s_ee = DMatrix::from_row_slice(2, 2, &[0.09, 0.002, 0.002, 0.05]);
            let em = DVector::from_vec(vec![1.0, -1.0]) + &s_et * ((t - 0.5) / s_tt);
            let ec = s_ee - &s_et * s_et.transpose() / s_tt;
            assert!((m - em).amax() < 1e-12);
            assert!((c - ec).amax() < 1e-12);
        }
    }

    #[test]
    fn independent_output_is_constant() {
        let g = single(&[0.5, 2.0], &[0.1, 0.0, 0.0, 0.3]);
        for &t in &[-1.0, 0.2, 0.8] {
            assert!((gmr(&g, t).unwrap().0[0] - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn reference_matches_pointwise_gmr() {
        let g = GmmModel::new(vec![
            GaussianComponent::new(
                0.4,
                DVector::from_vec(vec![0.2, 0.0]),
                DMatrix::from_row_slice(2, 2, &[0.01, 0.002, 0.002, 0.01]),
            )
            .unwrap(),
            GaussianComponent::new(
                0.6,
                DVector::from_vec(vec![0.7, 1.0]),
                DMatrix::from_row_slice(2, 2, &[0.02, -0.003, -0.003, 0.02]),
            )
            .unwrap(),
        ])
        .unwrap();
        let grid = uniform_grid(100);
        let r = build_reference(&g, &grid).unwrap();
        for p in r.points() {
            let (m, c) = gmr(&g, p.t).unwrap();
            assert_eq!(p.mean, m);
            assert_eq!(p.cov, c);
        }
        let one = build_reference(&g, &[0.5]).unwrap();
        assert_eq!(one.len(), 1);
        assert!(build_reference(&g, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = single(
            &[0.5, 1.0, 0.0],
            &[0.04, 0.01, 0.0, 0.01, 0.09, 0.0, 0.0, 0.0, 0.05],
        );
        let r = build_reference(&g, &uniform_grid(5)).unwrap();
        let back = ReferenceTrajectory::from_csv(&r.to_csv()).unwrap();
        assert_eq!(back, r);
        assert!(r
            .to_csv()
            .starts_with("t,mu_1,mu_2,sigma_1_1,sigma_1_2,sigma_2_1,sigma_2_2\n"));
    }
}

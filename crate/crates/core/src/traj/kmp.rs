use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::gmm::{row_major, TRAJ_SCHEMA_VERSION};
use super::gmr::{ReferencePoint, ReferenceTrajectory};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg;

pub const DEFAULT_SIGNAL_SCALE: f64 = 1.0;
pub const DEFAULT_BANDWIDTH: f64 = 0.05;
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const VIA_COVARIANCE: f64 = 1e-6;
/// Systems beyond this condition number are refused.
pub const MAX_CONDITION: f64 = 1e15;
const SPD_FLOOR: f64 = 1e-10;

/// Squared-exponential kernel `σ_f² exp(−(t−t')² / 2l²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeKernel {
    pub signal_scale: f64,
    pub bandwidth: f64,
}

impl Default for SeKernel {
    fn default() -> Self {
        Self {
            signal_scale: DEFAULT_SIGNAL_SCALE,
            bandwidth: DEFAULT_BANDWIDTH,
        }
    }
}

impl SeKernel {
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        self.signal_scale
            * self.signal_scale
            * (-d * d / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmpModel {
    reference: ReferenceTrajectory,
    kernel: SeKernel,
    lambda: f64,
}

impl KmpModel {
    pub fn new(reference: ReferenceTrajectory, kernel: SeKernel, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "regularizer must be positive, got {lambda}"
            )));
        }
        if !(kernel.bandwidth > 0.0 && kernel.signal_scale > 0.0) {
            return Err(Error::InvalidInput(
                "kernel bandwidth and scale must be positive".into(),
            ));
        }
        Ok(Self {
            reference,
            kernel,
            lambda,
        })
    }

    pub fn reference(&self) -> &ReferenceTrajectory {
        &self.reference
    }

    pub fn kernel(&self) -> SeKernel {
        self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn predictor(&self) -> Result<KmpPredictor> {
        KmpPredictor::new(self)
    }

    pub fn to_file(&self) -> KmpFile {
        KmpFile {
            schema_version: TRAJ_SCHEMA_VERSION,
            kernel: self.kernel,
            lambda: self.lambda,
            times: self.reference.times(),
            means: self
                .reference
                .points()
                .iter()
                .map(|p| p.mean.iter().copied().collect())
                .collect(),
            covariances: self
                .reference
                .points()
                .iter()
                .map(|p| row_major(&p.cov))
                .collect(),
        }
    }

    pub fn from_file(f: &KmpFile) -> Result<Self> {
        if f.schema_version != TRAJ_SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("unsupported version {}", f.schema_version),
            ));
        }
        if f.means.len() != f.times.len() || f.covariances.len() != f.times.len() {
            return Err(Error::schema(
                "times",
                "times, means and covariances differ in length",
            ));
        }
        let mut points = Vec::with_capacity(f.times.len());
        for (k, ((t, m), c)) in f.times.iter().zip(&f.means).zip(&f.covariances).enumerate() {
            let n = m.len();
            if c.len() != n * n {
                return Err(Error::schema(
                    format!("covariances[{k}]"),
                    format!("expected {} entries", n * n),
                ));
            }
            points.push(ReferencePoint {
                t: *t,
                mean: DVector::from_column_slice(m),
                cov: DMatrix::from_row_slice(n, n, c),
            });
        }
        Self::new(ReferenceTrajectory::new(points)?, f.kernel, f.lambda)
    }
}

/// Serialized KMP model; covariances are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmpFile {
    pub schema_version: u32,
    pub kernel: SeKernel,
    pub lambda: f64,
    pub times: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
}

/// Factorized `K + λΣ` for repeated prediction.
///
/// Both moments regularize with the stacked reference covariance. Targets are centered on the
/// mean of the reference means, so constant references are reproduced exactly.
pub struct KmpPredictor {
    times: Vec<f64>,
    kernel: SeKernel,
    lambda: f64,
    n_s: usize,
    offset: DVector<f64>,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl KmpPredictor {
    pub fn new(model: &KmpModel) -> Result<Self> {
        let points = model.reference.points();
        let n = points.len();
        let n_s = model.reference.n_s();
        let dim = n * n_s;
        let mut sys = DMatrix::zeros(dim, dim);
        for i in 0..n {
            for j in 0..n {
                let k = model.kernel.eval(points[i].t, points[j].t);
                for d in 0..n_s {
                    sys[(i * n_s + d, j * n_s + d)] = k;
                }
            }
            let mut block = sys.view_mut((i * n_s, i * n_s), (n_s, n_s));
            block += &points[i].cov * model.lambda;
        }
        let condition = linalg::condition_estimate(&sys);
        if !(condition < MAX_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }
        let chol = linalg::cholesky(&sys, "KMP system matrix")?;
        let offset = points.iter().fold(DVector::zeros(n_s), |a, p| a + &p.mean) / n as f64;
        let mut centered = DVector::zeros(dim);
        for (i, p) in points.iter().enumerate() {
            centered
                .rows_mut(i * n_s, n_s)
                .copy_from(&(&p.mean - &offset));
        }
        let alpha = chol.solve(&centered);
        Ok(Self {
            times: model.reference.times(),
            kernel: model.kernel,
            lambda: model.lambda,
            n_s,
            offset,
            alpha,
            chol,
        })
    }

    fn cross(&self, t: f64) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.n_s, self.times.len() * self.n_s);
        for (i, &ti) in self.times.iter().enumerate() {
            let v = self.kernel.eval(t, ti);
            for d in 0..self.n_s {
                k[(d, i * self.n_s + d)] = v;
            }
        }
        k
    }

    pub fn mean(&self, t: f64) -> DVector<f64> {
        &self.offset + self.cross(t) * &self.alpha
    }

    pub fn predict(&self, t: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if !t.is_finite() {
            return Err(Error::NonFinite("query time"));
        }
        let k = self.cross(t);
        let mean = &self.offset + &k * &self.alpha;
        let prior = DMatrix::identity(self.n_s, self.n_s) * self.kernel.eval(t, t);
        let reduced = prior - &k * self.chol.solve(&k.transpose());
        let cov = reduced * (self.times.len() as f64 / self.lambda);
        Ok((mean, linalg::spd_floor(&cov, SPD_FLOOR)))
    }
}

pub fn kmp_predict(model: &KmpModel, t_star: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    model.predictor()?.predict(t_star)
}

/// Desired synergy state at a time, with the confidence it should be enforced with.
#[derive(Debug, Clone, PartialEq)]
pub struct ViaPoint {
    pub t: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ViaPoint {
    /// Near-hard constraint with the default via covariance.
    pub fn hard(t: f64, mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            t,
            mean,
            cov: DMatrix::identity(n, n) * VIA_COVARIANCE,
        }
    }
}

/// Serialized via-point list; covariances are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViaPointFile {
    pub schema_version: u32,
    pub via_points: Vec<ViaPointEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViaPointEntry {
    pub t: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl ViaPointFile {
    pub fn new(via_points: &[ViaPoint]) -> Self {
        Self {
            schema_version: TRAJ_SCHEMA_VERSION,
            via_points: via_points
                .iter()
                .map(|v| ViaPointEntry {
                    t: v.t,
                    mean: v.mean.iter().copied().collect(),
                    cov: row_major(&v.cov),
                })
                .collect(),
        }
    }

    pub fn to_via_points(&self) -> Result<Vec<ViaPoint>> {
        if self.schema_version != TRAJ_SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("unsupported version {}", self.schema_version),
            ));
        }
        self.via_points
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let n = v.mean.len();
                if v.cov.len() != n * n {
                    return Err(Error::schema(
                        format!("via_points[{k}].cov"),
                        format!("expected {} entries", n * n),
                    ));
                }
                Ok(ViaPoint {
                    t: v.t,
                    mean: DVector::from_column_slice(&v.mean),
                    cov: DMatrix::from_row_slice(n, n, &v.cov),
                })
            })
            .collect()
    }
}

/// New model whose reference carries the via points: each replaces the nearest reference point
/// when closer than half the grid spacing, otherwise it is inserted in time order.
pub fn kmp_adapt(model: &KmpModel, via_points: &[ViaPoint]) -> Result<KmpModel> {
    let n_s = model.reference.n_s();
    for (i, v) in via_points.iter().enumerate() {
        ensure_dim("via point mean", n_s, v.mean.len())?;
        ensure_dim("via point covariance", n_s, v.cov.nrows())?;
        if !v.t.is_finite() {
            return Err(Error::NonFinite("via point time"));
        }
        if !linalg::is_spd(&v.cov) {
            return Err(Error::NotPositiveDefinite(format!(
                "via point covariance at t={}",
                v.t
            )));
        }
        if via_points[..i].iter().any(|o| o.t == v.t) {
            return Err(Error::DuplicateTime(v.t));
        }
    }
    let half = model.reference.min_spacing() / 2.0;
    let mut points: Vec<(ReferencePoint, bool)> = model
        .reference
        .points()
        .iter()
        .cloned()
        .map(|p| (p, false))
        .collect();
    for v in via_points {
        let nearest = points
            .iter()
            .enumerate()
            .filter(|(_, (_, replaced))| !replaced)
            .min_by(|a, b| (a.1 .0.t - v.t).abs().total_cmp(&(b.1 .0.t - v.t).abs()))
            .map(|(i, _)| i);
        let via = ReferencePoint {
            t: v.t,
            mean: v.mean.clone(),
            cov: v.cov.clone(),
        };
        match nearest {
            Some(i) if (points[i].0.t - v.t).abs() < half => points[i] = (via, true),
            _ => {
                let at = points.partition_point(|(p, _)| p.t < v.t);
                if points.get(at).is_some_and(|(p, _)| p.t == v.t) {
                    return Err(Error::DuplicateTime(v.t));
                }
                points.insert(at, (via, true));
            }
        }
    }
    let reference = ReferenceTrajectory::new(points.into_iter().map(|(p, _)| p).collect())?;
    KmpModel::new(reference, model.kernel, model.lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn via_point_file_round_trips() {
        let v = vec![
            ViaPoint::hard(0.5, DVector::from_vec(vec![0.1, -0.2])),
            ViaPoint {
                t: 1.0,
                mean: DVector::from_vec(vec![0.3, 0.4]),
                cov: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            },
        ];
        let text = serde_json::to_string(&ViaPointFile::new(&v)).unwrap();
        let back: ViaPointFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_via_points().unwrap(), v);
        let mut bad = back;
        bad.via_points[0].cov.pop();
        assert!(bad.to_via_points().is_err());
    }

    fn reference(n: usize, f: impl Fn(f64) -> [f64; 2], var: f64) -> ReferenceTrajectory {
        let pts = (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                ReferencePoint {
                    t,
                    mean: DVector::from_row_slice(&f(t)),
                    cov: DMatrix::identity(2, 2) * var,
                }
            })
            .collect();
        ReferenceTrajectory::new(pts).unwrap()
    }

    #[test]
    fn constant_reference_reproduced() {
        let m = KmpModel::new(
            reference(50, |_| [0.3, -0.7], 0.01),
            SeKernel::default(),
            DEFAULT_LAMBDA,
        )
        .unwrap();
        let p = m.predictor().unwrap();
        for &t in &[0.0, 0.123, 0.5, 1.0, 1.7] {
            let mean = p.mean(t);
            assert!((mean[0] - 0.3).abs() < 1e-9 && (mean[1] + 0.7).abs() < 1e-9);
        }
    }

    #[test]
    fn small_lambda_interpolates() {
        let r = reference(100, |t| [(3.0 * t).sin(), t * t], 1e-3);
        let m = KmpModel::new(r.clone(), SeKernel::default(), 1e-8).unwrap();
        let p = m.predictor().unwrap();
        for pt in r.points() {
            assert!((p.mean(pt.t) - &pt.mean).amax() < 1e-4);
        }
    }

    #[test]
    fn via_point_dominates() {
        let m = KmpModel::new(
            reference(100, |t| [(3.0 * t).sin(), t], 1e-3),
            SeKernel::default(),
            DEFAULT_LAMBDA,
        )
        .unwrap();
        let target = DVector::from_vec(vec![0.2, 0.9]);
        let a = kmp_adapt(&m, &[ViaPoint::hard(0.5, target.clone())]).unwrap();
        let (mean, cov) = kmp_predict(&a, 0.5).unwrap();
        assert!((mean - target).amax() < 1e-2);
        assert!(linalg::is_spd(&cov));
        assert_eq!(m.reference().len(), 100);
    }

    #[test]
    fn identical_via_point_changes_nothing() {
        let m = KmpModel::new(
            reference(30, |t| [t, 1.0 - t], 1e-2),
            SeKernel::default(),
            DEFAULT_LAMBDA,
        )
        .unwrap();
        let p = &m.reference().points()[10];
        let a = kmp_adapt(
            &m,
            &[ViaPoint {
                t: p.t,
                mean: p.mean.clone(),
                cov: p.cov.clone(),
            }],
        )
        .unwrap();
        let (pa, pb) = (m.predictor().unwrap(), a.predictor().unwrap());
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            assert!((pa.mean(t) - pb.mean(t)).amax() < 1e-9);
        }
    }

    #[test]
    fn via_insertion_and_errors() {
        let m = KmpModel::new(
            reference(11, |t| [t, t], 1e-2),
            SeKernel::default(),
            DEFAULT_LAMBDA,
        )
        .unwrap();
        let a = kmp_adapt(&m, &[ViaPoint::hard(0.25, DVector::zeros(2))]).unwrap();
        assert_eq!(a.reference().len(), 12);
        let b = kmp_adapt(&m, &[ViaPoint::hard(0.31, DVector::zeros(2))]).unwrap();
        assert_eq!(b.reference().len(), 11);
        let dup = [
            ViaPoint::hard(0.5, DVector::zeros(2)),
            ViaPoint::hard(0.5, DVector::from_element(2, 1.0)),
        ];
        assert!(matches!(kmp_adapt(&m, &dup), Err(Error::DuplicateTime(_))));
        let bad = ViaPoint {
            t: 0.5,
            mean: DVector::zeros(2),
            cov: -DMatrix::identity(2, 2),
        };
        assert!(matches!(
            kmp_adapt(&m, &[bad]),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn covariance_is_spd_everywhere() {
        let m = KmpModel::new(
            reference(40, |t| [t.sin(), t.cos()], 1e-2),
            SeKernel::default(),
            DEFAULT_LAMBDA,
        )
        .unwrap();
        let p = m.predictor().unwrap();
        for i in 0..=40 {
            let (_, c) = p.predict(i as f64 / 40.0).unwrap();
            assert!(linalg::is_spd(&c));
        }
    }

    #[test]
    fn file_round_trip() {
        let m = KmpModel::new(reference(7, |t| [t, -t], 1e-2), SeKernel::default(), 0.2).unwrap();
        let json = serde_json::to_string(&m.to_file()).unwrap();
        assert_eq!(
            KmpModel::from_file(&serde_json::from_str(&json).unwrap()).unwrap(),
            m
        );
    }
}

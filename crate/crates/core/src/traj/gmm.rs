use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg;

pub const DEFAULT_COMPONENTS: usize = 5;
pub const EM_TOLERANCE: f64 = 1e-8;
pub const EM_MAX_ITERS: usize = 500;
const KMEANS_ITERS: usize = 25;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One Gaussian over the joint `(t, e)` space; index 0 is time.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "component weight {weight} outside (0, 1]"
            )));
        }
        let d = mean.len();
        if d < 2 {
            return Err(Error::InvalidInput(
                "component needs time plus at least one output".into(),
            ));
        }
        ensure_dim("component covariance rows", d, cov.nrows())?;
        ensure_dim("component covariance cols", d, cov.ncols())?;
        linalg::cholesky(&cov, "component covariance")?;
        Ok(Self { weight, mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean_t(&self) -> f64 {
        self.mean[0]
    }

    pub fn mean_e(&self) -> DVector<f64> {
        self.mean.rows(1, self.dim() - 1).into_owned()
    }

    pub fn cov_tt(&self) -> f64 {
        self.cov[(0, 0)]
    }

    pub fn cov_et(&self) -> DVector<f64> {
        self.cov
            .view((1, 0), (self.dim() - 1, 1))
            .column(0)
            .into_owned()
    }

    pub fn cov_ee(&self) -> DMatrix<f64> {
        let n = self.dim() - 1;
        self.cov.view((1, 1), (n, n)).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    components: Vec<GaussianComponent>,
}

impl GmmModel {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidInput("mixture needs at least one component".into()))?;
        let d = first.dim();
        for c in &components {
            ensure_dim("component dimension", d, c.dim())?;
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "mixture weights sum to {total}"
            )));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn n_s(&self) -> usize {
        self.components[0].dim() - 1
    }

    /// Sum of per-sample log densities.
    pub fn log_likelihood(&self, samples: &[DVector<f64>]) -> Result<f64> {
        let chols = self.factorize()?;
        let mut ll = 0.0;
        let mut buf = vec![0.0; self.components.len()];
        for x in samples {
            ensure_dim("sample dimension", self.n_s() + 1, x.len())?;
            for (k, (c, ch)) in self.components.iter().zip(&chols).enumerate() {
                buf[k] = c.weight.ln() + log_density(x, &c.mean, ch);
            }
            ll += log_sum_exp(&buf);
        }
        Ok(ll)
    }

    fn factorize(&self) -> Result<Vec<Factor>> {
        self.components
            .iter()
            .map(|c| Factor::new(&c.cov))
            .collect()
    }

    pub fn to_file(&self, seed: Option<u64>) -> GmmFile {
        GmmFile {
            schema_version: TRAJ_SCHEMA_VERSION,
            n_s: self.n_s(),
            seed,
            weights: self.components.iter().map(|c| c.weight).collect(),
            means: self
                .components
                .iter()
                .map(|c| c.mean.iter().copied().collect())
                .collect(),
            covariances: self.components.iter().map(|c| row_major(&c.cov)).collect(),
        }
    }

    pub fn from_file(f: &GmmFile) -> Result<Self> {
        if f.schema_version != TRAJ_SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("unsupported version {}", f.schema_version),
            ));
        }
        if f.means.len() != f.weights.len() || f.covariances.len() != f.weights.len() {
            return Err(Error::schema(
                "components",
                "weights, means and covariances differ in length",
            ));
        }
        let d = f.n_s + 1;
        let mut comps = Vec::with_capacity(f.weights.len());
        for (k, ((w, m), c)) in f
            .weights
            .iter()
            .zip(&f.means)
            .zip(&f.covariances)
            .enumerate()
        {
            if m.len() != d || c.len() != d * d {
                return Err(Error::schema(
                    format!("components[{k}]"),
                    "dimension mismatch",
                ));
            }
            comps.push(GaussianComponent::new(
                *w,
                DVector::from_column_slice(m),
                DMatrix::from_row_slice(d, d, c),
            )?);
        }
        Self::new(comps)
    }
}

pub const TRAJ_SCHEMA_VERSION: u32 = 1;

/// Serialized mixture; covariances are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFile {
    pub schema_version: u32,
    pub n_s: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Cholesky factor plus log-determinant, for repeated density evaluation.
pub(crate) struct Factor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    log_det: f64,
}

impl Factor {
    pub(crate) fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let chol = linalg::cholesky(cov, "component covariance")?;
        let log_det = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        Ok(Self { chol, log_det })
    }
}

pub(crate) fn log_density(x: &DVector<f64>, mean: &DVector<f64>, f: &Factor) -> f64 {
    let d = x - mean;
    let z = f
        .chol
        .l()
        .solve_lower_triangular(&d)
        .expect("triangular factor is nonsingular");
    -0.5 * (z.norm_squared() + f.log_det + x.len() as f64 * LN_2PI)
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Fitted mixture plus the EM log-likelihood after every iteration.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

/// EM on `(t, e)` samples, initialized by seeded k-means++.
pub fn fit_gmm(samples: &[DVector<f64>], n_components: usize, seed: u64) -> Result<GmmFit> {
    if n_components == 0 {
        return Err(Error::InvalidInput(
            "component count must be at least 1".into(),
        ));
    }
    let d = samples
        .first()
        .map(|s| s.len())
        .ok_or_else(|| Error::InvalidInput("no samples".into()))?;
    if d < 2 {
        return Err(Error::InvalidInput(
            "samples need time plus at least one output".into(),
        ));
    }
    for s in samples {
        ensure_dim("sample dimension", d, s.len())?;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GMM sample"));
        }
    }
    let needed = n_components * (d + 1);
    if samples.len() < needed {
        return Err(Error::InvalidInput(format!(
            "{} samples is too few for {n_components} components (need {needed})",
            samples.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = kmeans_init(samples, n_components, &mut rng)?;
    let n = samples.len();
    let mut resp = DMatrix::zeros(n, n_components);
    let mut history = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut iterations = 0;

    for _ in 0..EM_MAX_ITERS {
        iterations += 1;
        // E-step
        let chols = model.factorize()?;
        let mut ll = 0.0;
        let mut buf = vec![0.0; n_components];
        for (i, x) in samples.iter().enumerate() {
            for (k, (c, ch)) in model.components.iter().zip(&chols).enumerate() {
                buf[k] = c.weight.ln() + log_density(x, &c.mean, ch);
            }
            let lse = log_sum_exp(&buf);
            ll += lse;
            for k in 0..n_components {
                resp[(i, k)] = (buf[k] - lse).exp();
            }
        }
        history.push(ll);
        if (ll - prev).abs() < EM_TOLERANCE {
            break;
        }
        prev = ll;
        model = m_step(samples, &resp)?;
    }
    log::debug!("EM finished after {iterations} iterations, log-likelihood {prev}");
    Ok(GmmFit {
        model,
        log_likelihood: history,
        iterations,
    })
}

fn m_step(samples: &[DVector<f64>], resp: &DMatrix<f64>) -> Result<GmmModel> {
    let n = samples.len();
    let d = samples[0].len();
    let mut comps = Vec::with_capacity(resp.ncols());
    for k in 0..resp.ncols() {
        let nk: f64 = resp.column(k).sum();
        if nk < 1e-12 {
            return Err(Error::DegenerateData(format!(
                "component {k} lost all responsibility"
            )));
        }
        let mut mean = DVector::zeros(d);
        for (i, x) in samples.iter().enumerate() {
            mean.axpy(resp[(i, k)], x, 1.0);
        }
        mean /= nk;
        let mut cov = DMatrix::zeros(d, d);
        for (i, x) in samples.iter().enumerate() {
            let diff = x - &mean;
            cov.ger(resp[(i, k)], &diff, &diff, 1.0);
        }
        cov /= nk;
        let cov = linalg::spd_repair(&cov)?;
        comps.push(GaussianComponent {
            weight: nk / n as f64,
            mean,
            cov,
        });
    }
    // weights renormalized against round-off
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in &mut comps {
        c.weight /= total;
    }
    GmmModel::new(comps)
}

fn kmeans_init(samples: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Result<GmmModel> {
    let n = samples.len();
    let mut centers = vec![samples[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = samples
        .iter()
        .map(|x| (x - &centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // every sample coincides with a center
            Err(_) => rng.random_range(0..n),
        };
        centers.push(samples[next].clone());
        for (dv, x) in dist.iter_mut().zip(samples) {
            *dv = dv.min((x - &centers[centers.len() - 1]).norm_squared());
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (i, x) in samples.iter().enumerate() {
            let best = nearest(x, &centers);
            if best != assign[i] {
                assign[i] = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = samples
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(x, _)| x)
                .collect();
            if !members.is_empty() {
                *center = members
                    .iter()
                    .fold(DVector::zeros(center.len()), |a, x| a + *x)
                    / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }

    let mut resp = DMatrix::zeros(n, k);
    for (i, &a) in assign.iter().enumerate() {
        resp[(i, a)] = 1.0;
    }
    // clusters too small for a covariance borrow a share of every sample
    let d = samples[0].len();
    for c in 0..k {
        if resp.column(c).sum() < (d + 1) as f64 {
            for i in 0..n {
                resp[(i, c)] = resp[(i, c)].max(1.0 / n as f64);
            }
        }
    }
    m_step(samples, &resp)
}

fn nearest(x: &DVector<f64>, centers: &[DVector<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let dd = (x - center).norm_squared();
        if dd < best_d {
            best_d = dd;
            best = c;
        }
    }
    best
}

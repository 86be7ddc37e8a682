//! Postural synergy extraction (PCA over demonstrated joint configurations), coefficient
//! projection and reconstruction, and the maps between joint, contact and synergy velocities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::hand::{ContactAssignment, HandModel, JointConfig};
use crate::linalg;

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.85;
pub const SYNERGY_SCHEMA_VERSION: u32 = 1;

/// Named segment of a demonstration, starting at normalized time `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMarker {
    pub name: String,
    pub start: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub object_tag: String,
    pub samples: Vec<JointConfig>,
    pub phases: Vec<PhaseMarker>,
}

impl Demonstration {
    /// Phase active at normalized time `t`.
    pub fn phase_at(&self, t: f64) -> Option<&str> {
        self.phases
            .iter()
            .rfind(|p| p.start <= t)
            .map(|p| p.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationSet {
    demos: Vec<Demonstration>,
    n_q: usize,
}

impl DemonstrationSet {
    pub fn new(demos: Vec<Demonstration>) -> Result<Self> {
        if demos.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 demonstrations, got {}",
                demos.len()
            )));
        }
        let n_q = demos[0]
            .samples
            .first()
            .map(JointConfig::len)
            .ok_or_else(|| Error::InvalidInput("demonstration 0 is empty".into()))?;
        for (k, d) in demos.iter().enumerate() {
            if d.samples.is_empty() {
                return Err(Error::InvalidInput(format!("demonstration {k} is empty")));
            }
            let mut prev = f64::NEG_INFINITY;
            for s in &d.samples {
                ensure_dim("demonstration sample", n_q, s.len())?;
                let t = s.timestamp.ok_or_else(|| {
                    Error::InvalidInput(format!("demonstration {k} has a sample without timestamp"))
                })?;
                if !(0.0..=1.0).contains(&t) || t <= prev {
                    return Err(Error::InvalidInput(format!(
                        "demonstration {k}: timestamps must be strictly increasing in [0, 1]"
                    )));
                }
                if s.theta.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("demonstration sample"));
                }
                prev = t;
            }
        }
        Ok(Self { demos, n_q })
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn pooled(&self) -> Vec<&JointConfig> {
        self.demos.iter().flat_map(|d| d.samples.iter()).collect()
    }
}

/// Mean of all pooled configurations.
pub fn nominal_posture<'a>(
    configs: impl IntoIterator<Item = &'a JointConfig>,
) -> Result<DVector<f64>> {
    let mut iter = configs.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::InvalidInput("nominal posture of an empty set".into()))?;
    let mut sum = first.theta.clone();
    let mut count = 1usize;
    for q in iter {
        ensure_dim("nominal posture", sum.len(), q.len())?;
        sum += &q.theta;
        count += 1;
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynergyModel {
    s0: DVector<f64>,
    basis: DMatrix<f64>,
    basis_pinv: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    threshold: f64,
    joint_limits: Option<Vec<[f64; 2]>>,
}

impl SynergyModel {
    pub fn new(
        s0: DVector<f64>,
        basis: DMatrix<f64>,
        eigenvalues: DVector<f64>,
        threshold: f64,
    ) -> Result<Self> {
        ensure_dim("synergy basis rows", s0.len(), basis.nrows())?;
        ensure_dim("eigenvalue count", s0.len(), eigenvalues.len())?;
        if basis.ncols() == 0 {
            return Err(Error::InvalidInput(
                "synergy basis needs at least one column".into(),
            ));
        }
        let gram = basis.transpose() * &basis;
        if (gram - DMatrix::identity(basis.ncols(), basis.ncols())).amax() > 1e-9 {
            return Err(Error::InvalidInput(
                "synergy basis columns are not orthonormal".into(),
            ));
        }
        let (basis_pinv, _) = linalg::pinv(&basis);
        Ok(Self {
            s0,
            basis,
            basis_pinv,
            eigenvalues,
            threshold,
            joint_limits: None,
        })
    }

    /// Attach joint limits used to clamp reconstructions.
    pub fn with_limits(mut self, limits: Vec<[f64; 2]>) -> Result<Self> {
        ensure_dim("joint limits", self.n_q(), limits.len())?;
        self.joint_limits = Some(limits);
        Ok(self)
    }

    pub fn s0(&self) -> &DVector<f64> {
        &self.s0
    }

    /// Reduced basis `Ê` (n_q × n_s), orthonormal columns.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn joint_limits(&self) -> Option<&[[f64; 2]]> {
        self.joint_limits.as_deref()
    }

    pub fn n_q(&self) -> usize {
        self.s0.len()
    }

    pub fn n_s(&self) -> usize {
        self.basis.ncols()
    }

    pub fn explained_variance(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return 1.0;
        }
        self.eigenvalues.iter().take(self.n_s()).sum::<f64>() / total
    }

    /// `e = Ê† (θ − s0)`.
    pub fn project(&self, q: &JointConfig) -> Result<DVector<f64>> {
        ensure_dim("projected configuration", self.n_q(), q.len())?;
        Ok(&self.basis_pinv * (&q.theta - &self.s0))
    }

    /// `θ̂ = s0 + Ê e`, clamped to the joint limits when the model carries them.
    pub fn reconstruct(&self, e: &DVector<f64>) -> Result<JointConfig> {
        let raw = self.reconstruct_unclamped(e)?;
        let Some(limits) = &self.joint_limits else {
            return Ok(raw);
        };
        let mut out = raw;
        let mut clamped = false;
        for (v, l) in out.theta.iter_mut().zip(limits) {
            let c = v.clamp(l[0], l[1]);
            clamped |= c != *v;
            *v = c;
        }
        if clamped {
            log::warn!("synergy reconstruction clamped to joint limits");
        }
        Ok(out)
    }

    pub fn reconstruct_unclamped(&self, e: &DVector<f64>) -> Result<JointConfig> {
        ensure_dim("synergy coefficients", self.n_s(), e.len())?;
        Ok(JointConfig::new(&self.s0 + &self.basis * e))
    }

    pub fn to_file(&self) -> SynergyModelFile {
        SynergyModelFile {
            schema_version: SYNERGY_SCHEMA_VERSION,
            s0: self.s0.iter().copied().collect(),
            e_hat: self.basis.as_slice().to_vec(),
            eigenvalues: self.eigenvalues.iter().copied().collect(),
            threshold: self.threshold,
            n_s: self.n_s(),
            joint_limits: self.joint_limits.clone(),
        }
    }

    pub fn from_file(f: &SynergyModelFile) -> Result<Self> {
        if f.schema_version != SYNERGY_SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("unsupported version {}", f.schema_version),
            ));
        }
        let n_q = f.s0.len();
        if f.e_hat.len() != n_q * f.n_s {
            return Err(Error::schema(
                "E_hat",
                format!("expected {} entries", n_q * f.n_s),
            ));
        }
        let model = Self::new(
            DVector::from_column_slice(&f.s0),
            DMatrix::from_column_slice(n_q, f.n_s, &f.e_hat),
            DVector::from_column_slice(&f.eigenvalues),
            f.threshold,
        )?;
        match &f.joint_limits {
            Some(l) => model.with_limits(l.clone()),
            None => Ok(model),
        }
    }
}

/// Serialized form; `E_hat` is stored column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynergyModelFile {
    pub schema_version: u32,
    pub s0: Vec<f64>,
    #[serde(rename = "E_hat")]
    pub e_hat: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub threshold: f64,
    pub n_s: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_limits: Option<Vec<[f64; 2]>>,
}

/// PCA on the pooled demonstrations; keeps the smallest number of leading components whose
/// cumulative eigenvalue share exceeds `threshold`.
pub fn extract_synergies(demos: &DemonstrationSet, threshold: f64) -> Result<SynergyModel> {
    extract_from_configs(&demos.pooled(), threshold)
}

pub fn extract_from_configs(configs: &[&JointConfig], threshold: f64) -> Result<SynergyModel> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "variance threshold {threshold} outside (0, 1]"
        )));
    }
    if configs.len() < 2 {
        return Err(Error::DegenerateData(
            "need at least two configurations".into(),
        ));
    }
    let s0 = nominal_posture(configs.iter().copied())?;
    let n_q = s0.len();
    if configs.len() <= n_q {
        log::warn!(
            "only {} samples for {} joints; covariance estimate is rank-deficient",
            configs.len(),
            n_q
        );
    }
    let mut cov = DMatrix::zeros(n_q, n_q);
    for q in configs {
        let d = &q.theta - &s0;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= (configs.len() - 1) as f64;
    let cov = linalg::symmetrize(&cov);

    let total: f64 = cov.trace();
    let scale = s0.amax().max(1.0);
    if !(total > 1e-24 * scale * scale) {
        // Algorithm-1 null-matrix branch
        return Err(Error::DegenerateData(
            "demonstrations have zero variance".into(),
        ));
    }

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..n_q).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues =
        DVector::from_iterator(n_q, order.iter().map(|&i| eig.eigenvalues[i].max(0.0)));
    let sum: f64 = eigenvalues.iter().sum();

    let mut n_s = n_q;
    let mut acc = 0.0;
    for (k, v) in eigenvalues.iter().enumerate() {
        acc += v;
        if acc / sum > threshold {
            n_s = k + 1;
            break;
        }
    }
    let cols: Vec<DVector<f64>> = order[..n_s]
        .iter()
        .map(|&i| canonical_sign(eig.eigenvectors.column(i).normalize()))
        .collect();
    SynergyModel::new(s0, DMatrix::from_columns(&cols), eigenvalues, threshold)
}

/// Flip so that the first entry with magnitude above round-off is positive.
fn canonical_sign(v: DVector<f64>) -> DVector<f64> {
    let tol = 1e-12 * v.amax();
    match v.iter().find(|x| x.abs() > tol) {
        Some(&x) if x < 0.0 => -v,
        _ => v,
    }
}

/// `θ = S e + θ_0`.
pub fn synergy_to_joint(
    s: &DMatrix<f64>,
    e: &DVector<f64>,
    theta0: &JointConfig,
) -> Result<JointConfig> {
    ensure_dim("synergy coefficients", s.ncols(), e.len())?;
    ensure_dim("initial configuration", s.nrows(), theta0.len())?;
    Ok(JointConfig::new(s * e + &theta0.theta))
}

/// How the joint-to-synergy velocity chain is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityChain {
    /// `ė = S† C_h J_hᵀ (J_h C_h J_hᵀ)† A_m A_m† J_h θ̇`: joint motion is mapped to contact
    /// motion, restricted to what a rigid object twist can produce, pulled back through the
    /// compliance-weighted inverse of the hand Jacobian and projected on the synergies.
    #[default]
    Consistent,
    /// Literal left-to-right product `J_h A_m† C_h S† θ̇`; only defined when the shapes agree.
    Printed,
}

/// Linear maps from object twist / joint velocity into synergy velocity at one grasp posture.
#[derive(Debug, Clone)]
pub struct SynergyVelocityMap {
    /// n_s × 7 map from `[ȯ; ω; ṙ]`.
    pub twist_to_synergy: DMatrix<f64>,
    /// n_s × n_q map from `θ̇`.
    pub joint_to_synergy: DMatrix<f64>,
}

impl SynergyVelocityMap {
    pub fn new(
        hand: &HandModel,
        model: &SynergyModel,
        q: &JointConfig,
        contacts: &ContactAssignment,
        a_m: &DMatrix<f64>,
    ) -> Result<Self> {
        ensure_dim("synergy model joints", hand.n_q(), model.n_q())?;
        ensure_dim("motion transfer rows", 3 * contacts.len(), a_m.nrows())?;
        let j = hand.jacobian(q, contacts)?;
        let rank_j = linalg::rank(&j);
        if rank_j == 0 {
            return Err(Error::RankDeficient {
                factor: "hand Jacobian",
                rank: 0,
                needed: 1,
            });
        }
        let (a_pinv, rank_a) = linalg::pinv(a_m);
        if rank_a == 0 {
            return Err(Error::RankDeficient {
                factor: "motion transfer matrix",
                rank: 0,
                needed: 1,
            });
        }
        let c = hand.compliance();
        let (contact_pinv, _) = linalg::pinv(&(&j * c * j.transpose()));
        let (s_pinv, _) = linalg::pinv(model.basis());
        let pull_back = &s_pinv * c * j.transpose() * contact_pinv;
        let twist_to_synergy = &pull_back * a_m;
        let rank_t = linalg::rank(&twist_to_synergy);
        if rank_t == 0 {
            return Err(Error::RankDeficient {
                factor: "composed synergy velocity map",
                rank: 0,
                needed: 1,
            });
        }
        let joint_to_synergy = &twist_to_synergy * a_pinv * &j;
        Ok(Self {
            twist_to_synergy,
            joint_to_synergy,
        })
    }
}

/// Synergy-space velocity induced by joint velocity `q_dot` at posture `q`.
pub fn joint_to_synergy_velocity(
    hand: &HandModel,
    model: &SynergyModel,
    q: &JointConfig,
    contacts: &ContactAssignment,
    a_m: &DMatrix<f64>,
    q_dot: &DVector<f64>,
    chain: VelocityChain,
) -> Result<DVector<f64>> {
    ensure_dim("joint velocity", hand.n_q(), q_dot.len())?;
    match chain {
        VelocityChain::Consistent => {
            let map = SynergyVelocityMap::new(hand, model, q, contacts, a_m)?;
            Ok(map.joint_to_synergy * q_dot)
        }
        VelocityChain::Printed => {
            let j = hand.jacobian(q, contacts)?;
            let (a_pinv, _) = linalg::pinv(a_m);
            let (s_pinv, _) = linalg::pinv(model.basis());
            let m = checked_mul(
                &checked_mul(&checked_mul(&j, &a_pinv)?, hand.compliance())?,
                &s_pinv,
            )?;
            ensure_dim("printed velocity chain", m.ncols(), q_dot.len())?;
            Ok(m * q_dot)
        }
    }
}

fn checked_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_dim("printed velocity chain", a.ncols(), b.nrows())?;
    Ok(a * b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfgs(rows: &[DVector<f64>]) -> Vec<JointConfig> {
        rows.iter().cloned().map(JointConfig::new).collect()
    }

    fn random_rows(n: usize, dim: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn nominal_posture_constant_and_symmetric() {
        let th = DVector::from_vec(vec![0.1, -0.4, 1.2]);
        let same = cfgs(&vec![th.clone(); 7]);
        assert!((nominal_posture(&same).unwrap() - &th).amax() < 1e-15);
        let sym = cfgs(&[th.clone(), -th]);
        assert_eq!(nominal_posture(&sym).unwrap().amax(), 0.0);
        assert!(nominal_posture(&[]).is_err());
    }

    #[test]
    fn nominal_posture_matches_streaming_mean() {
        let rows = random_rows(50, 6, 3);
        let mut mean = DVector::zeros(6);
        for (k, r) in rows.iter().enumerate() {
            mean += (r - &mean) / (k + 1) as f64;
        }
        let got = nominal_posture(&cfgs(&rows)).unwrap();
        assert!((got - mean).amax() < 1e-12);
    }

    #[test]
    fn rank_one_data() {
        let v = DVector::from_vec(vec![0.0, 3.0, -4.0, 0.0]) / 5.0;
        let base = DVector::from_vec(vec![0.2, 0.1, 0.0, -0.3]);
        let rows: Vec<_> = (0..20)
            .map(|k| &base + &v * (k as f64 * 0.1 - 1.0))
            .collect();
        let c = cfgs(&rows);
        let refs: Vec<&JointConfig> = c.iter().collect();
        let m = extract_from_configs(&refs, 0.85).unwrap();
        assert_eq!(m.n_s(), 1);
        assert!((m.basis().column(0) - &v).amax() < 1e-9);
        assert!((m.explained_variance() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_two_shares() {
        // coordinates chosen so the sample covariance is diag(0.7, 0.3)·c exactly
        let a = 0.7f64.sqrt();
        let b = 0.3f64.sqrt();
        let rows = vec![
            DVector::from_vec(vec![a, b, 0.0]),
            DVector::from_vec(vec![a, -b, 0.0]),
            DVector::from_vec(vec![-a, b, 0.0]),
            DVector::from_vec(vec![-a, -b, 0.0]),
        ];
        let c = cfgs(&rows);
        let refs: Vec<&JointConfig> = c.iter().collect();
        let m = extract_from_configs(&refs, 0.85).unwrap();
        let ev = m.eigenvalues();
        assert!((ev[0] / ev.sum() - 0.7).abs() < 1e-12);
        assert_eq!(m.n_s(), 2);
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let c = cfgs(&vec![DVector::from_element(4, 0.3); 5]);
        let refs: Vec<&JointConfig> = c.iter().collect();
        assert!(matches!(
            extract_from_configs(&refs, 0.85),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn eigenpairs_match_svd_of_data() {
        let rows = random_rows(40, 5, 11);
        let c = cfgs(&rows);
        let refs: Vec<&JointConfig> = c.iter().collect();
        let m = extract_from_configs(&refs, 1.0).unwrap();
        assert_eq!(m.n_s(), 5);
        // independent route: SVD of the centered data matrix
        let mean = rows.iter().fold(DVector::zeros(5), |a, r| a + r) / 40.0;
        let data = DMatrix::from_fn(40, 5, |i, j| rows[i][j] - mean[j]);
        let svd = data.svd(false, true);
        let mut pairs: Vec<(f64, DVector<f64>)> = svd
            .singular_values
            .iter()
            .enumerate()
            .map(|(k, s)| (s * s / 39.0, svd.v_t.as_ref().unwrap().row(k).transpose()))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (k, (val, vec)) in pairs.iter().enumerate() {
            assert!((m.eigenvalues()[k] - val).abs() < 1e-9);
            let col = m.basis().column(k);
            let d = (col - vec).amax().min((col + vec).amax());
            assert!(d < 1e-9, "column {k} differs by {d}");
        }
    }

    #[test]
    fn canonical_signs_and_orthonormality() {
        let rows = random_rows(60, 7, 5);
        let c = cfgs(&rows);
        let refs: Vec<&JointConfig> = c.iter().collect();
        let m = extract_from_configs(&refs, 0.6).unwrap();
        let gram = m.basis().transpose() * m.basis();
        assert!((gram - DMatrix::identity(m.n_s(), m.n_s())).amax() < 1e-9);
        for col in m.basis().column_iter() {
            let first = col.iter().find(|x| x.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn project_and_reconstruct() {
        let rows = random_rows(30, 6, 8);
        let c = cfgs(&rows);
        let refs: Vec<&JointConfig> = c.iter().collect();
        let m = extract_from_configs(&refs, 0.7).unwrap();
        let s0 = JointConfig::new(m.s0().clone());
        assert!(m.project(&s0).unwrap().amax() < 1e-15);
        let e_star = DVector::from_fn(m.n_s(), |i, _| 0.3 - 0.2 * i as f64);
        let q = m.reconstruct(&e_star).unwrap();
        assert!((m.project(&q).unwrap() - &e_star).amax() < 1e-10);
        assert_eq!(
            m.reconstruct(&DVector::zeros(m.n_s())).unwrap().theta,
            *m.s0()
        );
        // residual of a random configuration is orthogonal to the basis
        let r = JointConfig::new(DVector::from_fn(6, |i, _| (i as f64).sin()));
        let rec = m.reconstruct(&m.project(&r).unwrap()).unwrap();
        let resid = &r.theta - &rec.theta;
        for col in m.basis().column_iter() {
            assert!(col.dot(&resid).abs() < 1e-9);
        }
    }

    #[test]
    fn full_basis_round_trip() {
        let rows = random_rows(30, 4, 9);
        let c = cfgs(&rows);
        let refs: Vec<&JointConfig> = c.iter().collect();
        let m = extract_from_configs(&refs, 1.0).unwrap();
        for q in &c {
            let back = m.reconstruct(&m.project(q).unwrap()).unwrap();
            assert!((back.theta - &q.theta).amax() < 1e-10);
        }
    }

    #[test]
    fn synergy_to_joint_affine() {
        let s = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, 0.0, 2.0]);
        let t0 = JointConfig::new(DVector::from_vec(vec![0.1, 0.2, 0.3]));
        assert_eq!(
            synergy_to_joint(&s, &DVector::zeros(2), &t0).unwrap().theta,
            t0.theta
        );
        let unit = synergy_to_joint(&s, &DVector::from_vec(vec![1.0, 0.0]), &t0).unwrap();
        assert!((unit.theta - &t0.theta - s.column(0)).amax() < 1e-15);
        assert!(synergy_to_joint(&s, &DVector::zeros(3), &t0).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let rows = random_rows(30, 4, 1);
        let c = cfgs(&rows);
        let refs: Vec<&JointConfig> = c.iter().collect();
        let m = extract_from_configs(&refs, 0.85).unwrap();
        let json = serde_json::to_string(&m.to_file()).unwrap();
        let back = SynergyModel::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}

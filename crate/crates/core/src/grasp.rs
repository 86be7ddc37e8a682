//! Grasp matrix, linearized friction cones, the soft-synergy contact force model, the margin
//! cost and its descent in synergy space, force closure and motor limits.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::hand::{ContactAssignment, HandModel, JointConfig};
use crate::linalg::{self, LpOutcome};

pub const DEFAULT_FRICTION: f64 = 0.5;
pub const DEFAULT_EDGES: usize = 8;
pub const DEFAULT_MARGIN: f64 = 0.01;
pub const DEFAULT_KAPPA: f64 = -1.0;
pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_MAX_ITERS: usize = 50;
pub const FD_STEP: f64 = 1e-5;
pub const MAX_BACKTRACKS: usize = 20;
/// Largest synergy step taken in one descent iteration.
pub const DEFAULT_MAX_STEP: f64 = 0.05;
/// Fingertip pad compliance in m/N, added to the joint-compliance path.
pub const DEFAULT_PAD_COMPLIANCE: f64 = 1e-4;
pub const DEFAULT_MOTOR_CONSTANT: f64 = 0.5;
pub const DEFAULT_CURRENT_LIMIT: f64 = 1.0;

/// Hard-finger contact with inward unit normal.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub mu: f64,
}

impl ContactPoint {
    pub fn new(position: Vector3<f64>, normal: Vector3<f64>, mu: f64) -> Result<Self> {
        let len = normal.norm();
        if !(len.is_finite() && len > 1e-12) || !position.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidContact {
                index: 0,
                reason: "normal must be finite and nonzero".into(),
            });
        }
        if !(mu >= 0.0) {
            return Err(Error::InvalidContact {
                index: 0,
                reason: format!("friction {mu} is negative"),
            });
        }
        Ok(Self {
            position,
            normal: normal / len,
            mu,
        })
    }

    /// Orthonormal tangent pair completing the normal to a right-handed frame.
    pub fn tangents(&self) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.normal;
        let helper = if n.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let t1 = (helper - n * n.dot(&helper)).normalize();
        (t1, n.cross(&t1))
    }
}

/// `6 × 3n_c` map from stacked contact forces to the wrench about `origin`.
pub fn grasp_matrix(origin: &Vector3<f64>, contacts: &[ContactPoint]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(6, 3 * contacts.len());
    for (i, c) in contacts.iter().enumerate() {
        g.view_mut((0, 3 * i), (3, 3))
            .copy_from(&nalgebra::Matrix3::identity());
        g.view_mut((3, 3 * i), (3, 3))
            .copy_from(&linalg::skew(&(c.position - origin)));
    }
    g
}

/// Orthonormal basis of the internal forces (null space of `G`); may have zero columns.
pub fn internal_force_basis(g: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::null_space(g)
}

/// `f_c = G†ω + ξ y` for internal-force coordinates `y`.
pub fn contact_forces(
    g: &DMatrix<f64>,
    wrench: &DVector<f64>,
    xi: &DMatrix<f64>,
    internal: &DVector<f64>,
) -> Result<DVector<f64>> {
    ensure_dim("wrench", 6, wrench.len())?;
    ensure_dim("internal force coordinates", xi.ncols(), internal.len())?;
    let (g_pinv, _) = linalg::pinv(g);
    let particular = &g_pinv * wrench;
    check_resistible(g, &particular, wrench)?;
    Ok(particular + xi * internal)
}

fn check_resistible(
    g: &DMatrix<f64>,
    particular: &DVector<f64>,
    wrench: &DVector<f64>,
) -> Result<()> {
    let residual = (g * particular - wrench).norm();
    if residual > 1e-9 * (1.0 + wrench.norm()) {
        return Err(Error::UnresistibleWrench { residual });
    }
    Ok(())
}

/// Friction cone inscribed by an `n_edges` pyramid, plus the cost margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionPyramid {
    pub n_edges: usize,
    pub margin: f64,
}

impl Default for FrictionPyramid {
    fn default() -> Self {
        Self {
            n_edges: DEFAULT_EDGES,
            margin: DEFAULT_MARGIN,
        }
    }
}

impl FrictionPyramid {
    pub fn new(n_edges: usize, margin: f64) -> Result<Self> {
        if n_edges < 3 {
            return Err(Error::InvalidInput(format!(
                "pyramid needs at least 3 edges, got {n_edges}"
            )));
        }
        if !(margin > 0.0) {
            return Err(Error::InvalidInput(format!(
                "margin must be positive, got {margin}"
            )));
        }
        Ok(Self { n_edges, margin })
    }

    fn edge_angle(&self, k: usize) -> f64 {
        std::f64::consts::TAU * k as f64 / self.n_edges as f64
    }

    /// Edge generators `n + μ(cos φ t1 + sin φ t2)`, lying on the exact cone.
    pub fn edges(&self, contact: &ContactPoint) -> Vec<Vector3<f64>> {
        let (t1, t2) = contact.tangents();
        (0..self.n_edges)
            .map(|k| {
                let phi = self.edge_angle(k);
                contact.normal + (t1 * phi.cos() + t2 * phi.sin()) * contact.mu
            })
            .collect()
    }

    /// Constraint count per contact: the normal bound plus one per facet.
    pub fn constraints(&self) -> usize {
        self.n_edges + 1
    }

    /// Slack of every constraint at one contact: `f_n`, then `μ cos(π/n_e) f_n − f_t·u_j`
    /// with `u_j` the in-plane facet normal between edges `j` and `j+1`.
    pub fn margins(&self, contact: &ContactPoint, force: &Vector3<f64>) -> Vec<f64> {
        let (t1, t2) = contact.tangents();
        let fn_ = force.dot(&contact.normal);
        let ft = force - contact.normal * fn_;
        let half = std::f64::consts::PI / self.n_edges as f64;
        let reach = contact.mu * half.cos() * fn_;
        let mut out = Vec::with_capacity(self.constraints());
        out.push(fn_);
        for j in 0..self.n_edges {
            let mid = self.edge_angle(j) + half;
            let u = t1 * mid.cos() + t2 * mid.sin();
            out.push(reach - ft.dot(&u));
        }
        out
    }
}

/// `n_c × (n_e + 1)` constraint slacks; positive inside the pyramid.
pub fn cone_margins(
    forces: &DVector<f64>,
    contacts: &[ContactPoint],
    pyramid: &FrictionPyramid,
) -> Result<DMatrix<f64>> {
    ensure_dim("contact forces", 3 * contacts.len(), forces.len())?;
    let mut out = DMatrix::zeros(contacts.len(), pyramid.constraints());
    for (i, c) in contacts.iter().enumerate() {
        let f = forces.fixed_rows::<3>(3 * i).into_owned();
        for (j, m) in pyramid.margins(c, &f).into_iter().enumerate() {
            out[(i, j)] = m;
        }
    }
    Ok(out)
}

/// Piecewise margin penalty: `1/(2σ²)` for `σ ≥ p`, quadratic `aσ² + bσ + c` below, joined
/// with matching value and slope at `p` and curvature `a = 1/p⁴`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginCost {
    pub p: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl MarginCost {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "margin must be positive, got {p}"
            )));
        }
        Ok(Self {
            p,
            a: p.powi(-4),
            b: -3.0 * p.powi(-3),
            c: 2.5 * p.powi(-2),
        })
    }

    pub fn value(&self, sigma: f64) -> f64 {
        if sigma >= self.p {
            0.5 / (sigma * sigma)
        } else {
            (self.a * sigma + self.b) * sigma + self.c
        }
    }

    pub fn derivative(&self, sigma: f64) -> f64 {
        if sigma >= self.p {
            -1.0 / (sigma * sigma * sigma)
        } else {
            2.0 * self.a * sigma + self.b
        }
    }
}

pub fn grasp_cost(margins: &DMatrix<f64>, cost: &MarginCost) -> f64 {
    margins.iter().map(|&s| cost.value(s)).sum()
}

/// `η = Sᵀ J_hᵀ f_c`.
pub fn force_synergies(
    s: &DMatrix<f64>,
    jacobian: &DMatrix<f64>,
    forces: &DVector<f64>,
) -> Result<DVector<f64>> {
    ensure_dim("contact forces", jacobian.nrows(), forces.len())?;
    ensure_dim("synergy basis rows", jacobian.ncols(), s.nrows())?;
    Ok(s.transpose() * (jacobian.transpose() * forces))
}

/// DC motor model `τ = K_m I²` with a current ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorModel {
    pub k_m: f64,
    pub current_limit: f64,
}

impl Default for MotorModel {
    fn default() -> Self {
        Self {
            k_m: DEFAULT_MOTOR_CONSTANT,
            current_limit: DEFAULT_CURRENT_LIMIT,
        }
    }
}

impl MotorModel {
    /// Current magnitude needed for each actuator torque.
    pub fn currents(&self, torques: &DVector<f64>) -> DVector<f64> {
        torques.map(|t| (t.abs() / self.k_m).sqrt())
    }
}

/// Torques `K_m I²` and whether every current is within `limit`.
pub fn motor_torque_ok(currents: &DVector<f64>, k_m: f64, limit: f64) -> (bool, DVector<f64>) {
    let torques = currents.map(|i| k_m * i * i);
    (currents.iter().all(|i| i.abs() <= limit), torques)
}

/// True when the primitive contact wrenches positively span wrench space.
pub fn is_force_closure(
    g: &DMatrix<f64>,
    contacts: &[ContactPoint],
    pyramid: &FrictionPyramid,
) -> Result<bool> {
    ensure_dim("grasp matrix columns", 3 * contacts.len(), g.ncols())?;
    if contacts.is_empty() {
        return Ok(false);
    }
    if contacts.len() >= 2 {
        let p0 = contacts[0].position;
        let spread = contacts
            .iter()
            .map(|c| (c.position - p0).norm())
            .fold(0.0, f64::max);
        if spread < 1e-9 {
            return Err(Error::DegenerateGeometry("all contacts coincide".into()));
        }
    }
    // torque rows rescaled by the grasp size so the tolerance is unit-free
    let lever = (0..contacts.len())
        .map(|i| g.view((3, 3 * i), (3, 3)).amax())
        .fold(0.0, f64::max)
        .max(1e-12);
    let mut cols = Vec::new();
    for (i, c) in contacts.iter().enumerate() {
        let block = g.view((0, 3 * i), (6, 3));
        for e in pyramid.edges(c) {
            let mut w = block * e;
            w.rows_mut(3, 3).scale_mut(1.0 / lever);
            cols.push(w / e.norm());
        }
    }
    let w = DMatrix::from_columns(&cols);
    if linalg::rank(&w) < 6 {
        return Ok(false);
    }
    Ok(cone_is_everything(&w))
}

/// The cone of `w` is all of wrench space iff it holds the positive basis `e_1..e_6, −Σe_k`.
fn cone_is_everything(w: &DMatrix<f64>) -> bool {
    let mut targets: Vec<[f64; 6]> = (0..6)
        .map(|k| {
            let mut d = [0.0; 6];
            d[k] = 1.0;
            d
        })
        .collect();
    targets.push([-1.0; 6]);
    let c = vec![0.0; w.ncols()];
    targets
        .iter()
        .all(|d| matches!(linalg::simplex_max(&c, w, d), LpOutcome::Optimal { .. }))
}

/// Snapshot of grasp quality for one synergy offset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub gamma: f64,
    pub margins: Vec<Vec<f64>>,
    pub min_margin: f64,
    pub gradient: Vec<f64>,
    pub force_closure: bool,
    pub forces: Vec<f64>,
    pub motors_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub kappa_q: f64,
    pub dt: f64,
    pub max_iters: usize,
    pub max_step: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            kappa_q: DEFAULT_KAPPA,
            dt: DEFAULT_DT,
            max_iters: DEFAULT_MAX_ITERS,
            max_step: DEFAULT_MAX_STEP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub gamma: f64,
    pub min_margin: f64,
    pub step_norm: f64,
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentResult {
    pub offset: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub report: QualityReport,
    /// Force closure with every margin at or above `p`.
    pub success: bool,
}

/// Soft-synergy grasp at a fixed touching posture: the synergy offset `Δe` between commanded and
/// touching postures squeezes the object through the joint and pad compliances.
#[derive(Debug, Clone)]
pub struct SoftSynergyGrasp {
    contacts: Vec<ContactPoint>,
    g: DMatrix<f64>,
    xi: DMatrix<f64>,
    jacobian: DMatrix<f64>,
    coupling: DMatrix<f64>,
    particular: DVector<f64>,
    force_map: DMatrix<f64>,
    pyramid: FrictionPyramid,
    cost: MarginCost,
    motor: MotorModel,
    force_closure: bool,
    wrench_residual: f64,
}

/// Physical parameters of a grasp evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspParams {
    pub pyramid: FrictionPyramid,
    pub pad_compliance: f64,
    pub motor: MotorModel,
}

impl Default for GraspParams {
    fn default() -> Self {
        Self {
            pyramid: FrictionPyramid::default(),
            pad_compliance: DEFAULT_PAD_COMPLIANCE,
            motor: MotorModel::default(),
        }
    }
}

impl SoftSynergyGrasp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        hand: &HandModel,
        synergies: &DMatrix<f64>,
        touching: &JointConfig,
        assignment: &ContactAssignment,
        contacts: Vec<ContactPoint>,
        origin: &Vector3<f64>,
        wrench: &DVector<f64>,
        params: &GraspParams,
    ) -> Result<Self> {
        ensure_dim("contact points", assignment.len(), contacts.len())?;
        ensure_dim("synergy basis rows", hand.n_q(), synergies.nrows())?;
        ensure_dim("wrench", 6, wrench.len())?;
        let g = grasp_matrix(origin, &contacts);
        let xi = internal_force_basis(&g);
        let (g_pinv, _) = linalg::pinv(&g);
        // only the resistible part of the load is balanced; the remainder is reported
        let particular = &g_pinv * wrench;
        let wrench_residual = (&g * &particular - wrench).norm();
        if wrench_residual > 1e-9 * (1.0 + wrench.norm()) {
            log::warn!(
                "load wrench not resistible by these contacts (residual {wrench_residual:.3e})"
            );
        }
        let jacobian = hand.jacobian(touching, assignment)?;
        let n = 3 * contacts.len();
        let force_map = if xi.ncols() == 0 {
            DMatrix::zeros(n, synergies.ncols())
        } else {
            let compliance = DMatrix::identity(n, n) * params.pad_compliance
                + &jacobian * hand.compliance() * jacobian.transpose();
            let reduced = xi.transpose() * compliance * &xi;
            let stiffness =
                linalg::cholesky(&linalg::symmetrize(&reduced), "internal compliance")?.inverse();
            &xi * stiffness * xi.transpose() * &jacobian * synergies
        };
        let force_closure = is_force_closure(&g, &contacts, &params.pyramid)?;
        Ok(Self {
            contacts,
            g,
            xi,
            jacobian,
            coupling: hand.coupling().clone(),
            particular,
            force_map,
            pyramid: params.pyramid,
            cost: MarginCost::new(params.pyramid.margin)?,
            motor: params.motor,
            force_closure,
            wrench_residual,
        })
    }

    pub fn grasp_matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn internal_basis(&self) -> &DMatrix<f64> {
        &self.xi
    }

    pub fn contacts(&self) -> &[ContactPoint] {
        &self.contacts
    }

    pub fn force_closure(&self) -> bool {
        self.force_closure
    }

    /// Norm of the load component the contacts cannot balance.
    pub fn wrench_residual(&self) -> f64 {
        self.wrench_residual
    }

    pub fn n_s(&self) -> usize {
        self.force_map.ncols()
    }

    pub fn forces(&self, offset: &DVector<f64>) -> DVector<f64> {
        &self.particular + &self.force_map * offset
    }

    pub fn margins(&self, offset: &DVector<f64>) -> DMatrix<f64> {
        cone_margins(&self.forces(offset), &self.contacts, &self.pyramid)
            .expect("dimensions fixed at construction")
    }

    pub fn gamma(&self, offset: &DVector<f64>) -> f64 {
        grasp_cost(&self.margins(offset), &self.cost)
    }

    /// Actuator torques `couplingᵀ J_hᵀ f_c`.
    pub fn actuator_torques(&self, offset: &DVector<f64>) -> DVector<f64> {
        self.coupling.transpose() * (self.jacobian.transpose() * self.forces(offset))
    }

    pub fn motors_ok(&self, offset: &DVector<f64>) -> bool {
        let currents = self.motor.currents(&self.actuator_torques(offset));
        motor_torque_ok(&currents, self.motor.k_m, self.motor.current_limit).0
    }

    /// Central-difference `∂Γ/∂e`.
    pub fn gradient(&self, offset: &DVector<f64>) -> Result<DVector<f64>> {
        let mut grad = DVector::zeros(offset.len());
        for i in 0..offset.len() {
            let mut hi = offset.clone();
            let mut lo = offset.clone();
            hi[i] += FD_STEP;
            lo[i] -= FD_STEP;
            grad[i] = (self.gamma(&hi) - self.gamma(&lo)) / (2.0 * FD_STEP);
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost gradient"));
        }
        Ok(grad)
    }

    /// `Δe = κ_q ∂Γ/∂e Δt`.
    pub fn quality_gradient_step(
        &self,
        offset: &DVector<f64>,
        kappa_q: f64,
        dt: f64,
    ) -> Result<DVector<f64>> {
        if !(kappa_q < 0.0) {
            return Err(Error::InvalidInput(format!(
                "gain must be negative, got {kappa_q}"
            )));
        }
        Ok(self.gradient(offset)? * (kappa_q * dt))
    }

    pub fn report(&self, offset: &DVector<f64>) -> Result<QualityReport> {
        let margins = self.margins(offset);
        let min_margin = margins.min();
        Ok(QualityReport {
            gamma: grasp_cost(&margins, &self.cost),
            margins: margins
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            min_margin,
            gradient: self.gradient(offset)?.iter().copied().collect(),
            force_closure: self.force_closure,
            forces: self.forces(offset).iter().copied().collect(),
            motors_ok: self.motors_ok(offset),
        })
    }

    /// Backtracked descent: a step is kept only when Γ does not rise and the motors stay within
    /// their current limit. Stops when no step is accepted or after `max_iters`.
    pub fn descend(&self, start: &DVector<f64>, cfg: &DescentConfig) -> Result<DescentResult> {
        ensure_dim("synergy offset", self.n_s(), start.len())?;
        let mut offset = start.clone();
        let mut gamma = self.gamma(&offset);
        let mut history = vec![IterationRecord {
            iter: 0,
            gamma,
            min_margin: self.margins(&offset).min(),
            step_norm: 0.0,
            offset: offset.iter().copied().collect(),
        }];
        for iter in 1..=cfg.max_iters {
            let mut step = self.quality_gradient_step(&offset, cfg.kappa_q, cfg.dt)?;
            let norm = step.norm();
            if norm > cfg.max_step {
                step *= cfg.max_step / norm;
            }
            let mut accepted = None;
            for _ in 0..=MAX_BACKTRACKS {
                let cand = &offset + &step;
                let g = self.gamma(&cand);
                if g <= gamma && self.motors_ok(&cand) {
                    accepted = Some((cand, g));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, g)) = accepted else { break };
            let step_norm = (&cand - &offset).norm();
            if step_norm == 0.0 {
                break;
            }
            offset = cand;
            gamma = g;
            history.push(IterationRecord {
                iter,
                gamma,
                min_margin: self.margins(&offset).min(),
                step_norm,
                offset: offset.iter().copied().collect(),
            });
        }
        let report = self.report(&offset)?;
        let success = report.force_closure && report.min_margin >= self.cost.p;
        Ok(DescentResult {
            offset: offset.iter().copied().collect(),
            history,
            report,
            success,
        })
    }
}

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::PipelineConfig;
use super::grasp_eval::{load_wrench, ContactRequest};
use super::train::TrainedModels;
use crate::error::{Error, Result};
use crate::grasp::SoftSynergyGrasp;
use crate::hand::{ContactAssignment, HandModel, JointConfig};
use crate::linalg;
use crate::object::{
    close_along_synergy, contacts_on, fingers_by_name, manipulation_to_via_points, select_fingers,
    ManipulationGoal, ObjectFile, ObjectPrimitive, PlannedGrasp, CONTACT_TOLERANCE, GRASP_TIME,
    PRESHAPE_TIME,
};
use crate::traj::{
    kmp_adapt, prioritized_merge, PrioritizedTask, ReferencePoint, ReferenceTrajectory, ViaPoint,
};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
/// Covariance of a coefficient block a task pins down.
const TIGHT: f64 = 1e-6;
/// Covariance of a coefficient block a task leaves free.
const BROAD: f64 = 1e3;
/// Clock time of one manipulation or release step without an explicit goal duration.
const STEP_TIME: f64 = 0.125;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ramp {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Phase {
    Grasp {
        object: usize,
        #[serde(default)]
        contacts: Option<ContactRequest>,
        #[serde(default)]
        wrench: Option<[f64; 6]>,
    },
    /// Either an object goal mapped through the synergy velocity map, or a scripted change of
    /// the synergy coefficients by `to − from`.
    Manipulate {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        goal: Option<ManipulationGoal>,
        #[serde(default)]
        ramp: Option<Ramp>,
        #[serde(default)]
        steps: Option<usize>,
    },
    Release {
        #[serde(default)]
        steps: Option<usize>,
    },
    Prioritized {
        tasks: Vec<TaskSpec>,
        #[serde(default)]
        steps: Option<usize>,
    },
}

impl Phase {
    fn name(&self) -> String {
        match self {
            Phase::Grasp { .. } => "grasp".into(),
            Phase::Manipulate { label, .. } => label.clone().unwrap_or_else(|| "manipulate".into()),
            Phase::Release { .. } => "release".into(),
            Phase::Prioritized { .. } => "prioritized".into(),
        }
    }
}

/// One sub-hand task: either hold scripted coefficients, or grasp an object and follow a ramp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub fingers: Vec<String>,
    pub priority: f64,
    #[serde(default)]
    pub hold: Option<Vec<f64>>,
    #[serde(default)]
    pub object: Option<usize>,
    #[serde(default)]
    pub ramp: Option<Ramp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub hand: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub objects: Vec<ObjectFile>,
    pub phases: Vec<Phase>,
    /// Partial pipeline configuration applied over the defaults.
    #[serde(default)]
    pub config: Value,
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| Error::schema("scenario", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("unsupported version {}", self.schema_version),
            ));
        }
        if self.phases.is_empty() {
            return Err(Error::schema("phases", "at least one phase is required"));
        }
        let prioritized = self
            .phases
            .iter()
            .filter(|p| matches!(p, Phase::Prioritized { .. }))
            .count();
        for (i, phase) in self.phases.iter().enumerate() {
            let path = format!("phases[{i}]");
            match phase {
                Phase::Grasp { object, .. } if *object >= self.objects.len() => {
                    return Err(Error::schema(path, format!("object {object} not defined")));
                }
                Phase::Grasp { .. } | Phase::Manipulate { .. } if prioritized > 0 => {
                    return Err(Error::schema(
                        path,
                        "prioritized scenarios take only prioritized and release phases",
                    ));
                }
                Phase::Manipulate { goal, ramp, .. } if goal.is_some() == ramp.is_some() => {
                    return Err(Error::schema(path, "give exactly one of goal or ramp"));
                }
                Phase::Prioritized { tasks, .. } => {
                    if prioritized > 1 {
                        return Err(Error::schema(path, "at most one prioritized phase"));
                    }
                    if tasks.is_empty() {
                        return Err(Error::schema(path, "no tasks"));
                    }
                    let sum: f64 = tasks.iter().map(|t| t.priority).sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::PrioritySum { index: 0, sum });
                    }
                    for (k, t) in tasks.iter().enumerate() {
                        if t.hold.is_some() == t.object.is_some() {
                            return Err(Error::schema(
                                format!("{path}.tasks[{k}]"),
                                "give exactly one of hold or object",
                            ));
                        }
                        if t.object.is_some_and(|o| o >= self.objects.len()) {
                            return Err(Error::schema(
                                format!("{path}.tasks[{k}].object"),
                                "object not defined",
                            ));
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Defaults, then the scenario's settings; command-line overrides are applied by the caller.
    pub fn config(&self, base: &PipelineConfig) -> Result<PipelineConfig> {
        let mut cfg = base.clone();
        if let Some(h) = &self.hand {
            cfg.hand = h.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.config.is_null() {
            return Ok(cfg);
        }
        cfg.with_overrides(&self.config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub e: Vec<f64>,
    pub theta: Vec<f64>,
    pub gamma: f64,
    pub min_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSummary {
    pub name: String,
    pub t_start: f64,
    pub t_end: f64,
    pub ok: bool,
    pub detail: String,
    pub gamma: Option<f64>,
    pub min_sigma: Option<f64>,
    pub max_tip_distance: Option<f64>,
    /// Largest change of held coefficients while other tasks moved.
    pub hold_drift: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    StabilityFailure,
    AdaptationFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::StabilityFailure => 2,
            Status::AdaptationFailure => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub scenario: String,
    pub hand: String,
    pub status: Status,
    pub n_e: usize,
    pub rows: Vec<TraceRow>,
    pub phases: Vec<PhaseSummary>,
}

impl RunTrace {
    /// CSV `t,e_1..e_n,gamma,min_sigma`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 1..=self.n_e {
            let _ = write!(out, ",e_{i}");
        }
        out.push_str(",gamma,min_sigma\n");
        for r in &self.rows {
            let _ = write!(out, "{}", r.t);
            for v in &r.e {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{}", r.gamma, r.min_sigma);
        }
        out
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            schema_version: u32,
            scenario: &'a str,
            hand: &'a str,
            status: Status,
            exit_code: i32,
            phases: &'a [PhaseSummary],
        }
        serde_json::to_string_pretty(&Summary {
            schema_version: SCENARIO_SCHEMA_VERSION,
            scenario: &self.scenario,
            hand: &self.hand,
            status: self.status,
            exit_code: self.status.exit_code(),
            phases: &self.phases,
        })
        .expect("summary serializes")
    }

    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }
}

/// Held grasp carried from a grasp phase into the following phases.
struct Holding {
    grasp: PlannedGrasp,
    gamma: f64,
    min_sigma: f64,
}

struct Sim<'a> {
    hand: &'a HandModel,
    models: &'a TrainedModels,
    cfg: &'a PipelineConfig,
    objects: Vec<ObjectPrimitive>,
    /// Joint posture is `s0 + basis·e`.
    basis: DMatrix<f64>,
    e: DVector<f64>,
    e_open: DVector<f64>,
    clock: f64,
    rows: Vec<TraceRow>,
    holding: Option<Holding>,
}

enum PhaseError {
    Stability(String),
    Adaptation(String),
    Other(Error),
}

impl From<Error> for PhaseError {
    fn from(e: Error) -> Self {
        match e {
            Error::Unreachable(m) | Error::Adaptation(m) => PhaseError::Adaptation(m),
            other => PhaseError::Other(other),
        }
    }
}

type PhaseResult = std::result::Result<PhaseSummary, PhaseError>;

impl Sim<'_> {
    fn posture(&self, e: &DVector<f64>) -> JointConfig {
        JointConfig::new(self.models.synergy.s0() + &self.basis * e)
    }

    fn push(&mut self, e: DVector<f64>, gamma: f64, min_sigma: f64) {
        let theta = self.posture(&e).theta.iter().copied().collect();
        // rows are finite by construction; a non-finite value here is a bug upstream
        assert!(
            e.iter().all(|v| v.is_finite()) && gamma.is_finite() && min_sigma.is_finite(),
            "non-finite trace row"
        );
        self.rows.push(TraceRow {
            t: self.clock,
            e: e.iter().copied().collect(),
            theta,
            gamma,
            min_sigma,
        });
        self.e = e;
    }

    fn summary(&self, name: String, t_start: f64) -> PhaseSummary {
        PhaseSummary {
            name,
            t_start,
            t_end: self.clock,
            ok: true,
            detail: String::new(),
            gamma: None,
            min_sigma: None,
            max_tip_distance: None,
            hold_drift: None,
        }
    }

    fn held_quality(&self) -> (f64, f64) {
        self.holding
            .as_ref()
            .map_or((0.0, 0.0), |h| (h.gamma, h.min_sigma))
    }

    /// Adapt the learned reference to the object, roll it out, then settle the grasp by descent.
    fn grasp(
        &mut self,
        object: usize,
        contacts: &Option<ContactRequest>,
        wrench: Option<[f64; 6]>,
    ) -> PhaseResult {
        let t_start = self.clock;
        let object = self.objects[object].clone();
        let request = contacts
            .clone()
            .unwrap_or(ContactRequest::Count(self.cfg.adapt.n_contacts));
        let fingers = match &request {
            ContactRequest::Count(n) => select_fingers(self.hand, *n)?,
            ContactRequest::Fingers(names) => fingers_by_name(self.hand, names)?,
        };
        let synergy = &self.models.synergy;
        let (planned, closure, dir) = close_along_synergy(
            self.hand,
            synergy.s0(),
            &self.basis,
            &self.e_open,
            &object,
            &fingers,
            self.cfg.grasp.mu_f,
        )?;
        let e_grasp = &self.e_open + &dir * closure;
        let e_pre = &self.e_open + &dir * (self.cfg.adapt.preshape_fraction * closure);
        let via = [
            ViaPoint::hard(PRESHAPE_TIME, e_pre),
            ViaPoint::hard(GRASP_TIME, e_grasp),
        ];
        let predictor = kmp_adapt(&self.models.kmp, &via)?.predictor()?;

        let n = self.cfg.adapt.rollout_points;
        let span = self.cfg.demo.duration;
        for k in 1..n {
            let u = k as f64 / (n - 1) as f64;
            self.clock = t_start + u * span;
            self.push(predictor.mean(u), 0.0, 0.0);
        }

        let q = self.posture(&self.e);
        let tips = self.hand.contact_positions(&q, &planned.assignment)?;
        let worst = tips
            .iter()
            .map(|t| planned.object.signed_distance(t).abs())
            .fold(0.0, f64::max);
        if worst > CONTACT_TOLERANCE {
            return Err(PhaseError::Adaptation(format!(
                "rollout ends {:.3} mm from the object surface",
                worst * 1e3
            )));
        }
        let contacts = contacts_on(&planned.object, &tips, self.cfg.grasp.mu_f)?;
        let wrench = load_wrench(&planned.object, self.cfg.grasp.gravity, wrench);
        let model = SoftSynergyGrasp::new(
            self.hand,
            &self.basis,
            &q,
            &planned.assignment,
            contacts.clone(),
            &planned.object.center(),
            &wrench,
            &self.cfg.grasp.params()?,
        )?;
        let result = model.descend(
            &DVector::zeros(self.basis.ncols()),
            &self.cfg.grasp.descent(),
        )?;
        let e_touch = self.e.clone();
        for rec in &result.history {
            self.clock += self.cfg.grasp.dt;
            self.push(
                &e_touch + DVector::from_row_slice(&rec.offset),
                rec.gamma,
                rec.min_margin,
            );
        }
        let mut summary = self.summary("grasp".into(), t_start);
        summary.gamma = Some(result.report.gamma);
        summary.min_sigma = Some(result.report.min_margin);
        summary.max_tip_distance = Some(worst);
        let grasp = PlannedGrasp {
            contacts,
            posture: q,
            ..planned
        };
        self.holding = Some(Holding {
            grasp,
            gamma: result.report.gamma,
            min_sigma: result.report.min_margin,
        });
        if !result.success {
            let why = if result.report.force_closure {
                "margins below p after descent"
            } else {
                "grasp is not force closure"
            };
            return Err(PhaseError::Stability(why.into()));
        }
        Ok(summary)
    }

    fn manipulate(
        &mut self,
        name: String,
        goal: &Option<ManipulationGoal>,
        ramp: &Option<Ramp>,
        steps: Option<usize>,
    ) -> PhaseResult {
        let t_start = self.clock;
        let steps = steps.unwrap_or(self.cfg.adapt.n_steps);
        let Some(holding) = &self.holding else {
            return Err(PhaseError::Other(Error::InvalidInput(format!(
                "phase {name} needs a preceding grasp"
            ))));
        };
        let (via, duration) = match (goal, ramp) {
            (Some(g), _) => {
                let via = manipulation_to_via_points(
                    self.hand,
                    &self.models.synergy,
                    &holding.grasp,
                    &self.e,
                    g,
                    steps,
                )?;
                (via, g.duration)
            }
            (None, Some(r)) => {
                let from = DVector::from_row_slice(&r.from);
                let to = DVector::from_row_slice(&r.to);
                (
                    crate::object::ramp_via_points(&self.e, &from, &to, steps)?,
                    steps as f64 * STEP_TIME,
                )
            }
            (None, None) => {
                return Err(PhaseError::Other(Error::InvalidInput(
                    "manipulation needs a goal or ramp".into(),
                )))
            }
        };
        let (gamma, min_sigma) = self.held_quality();
        for v in via.iter().skip(1) {
            self.clock = t_start + v.t * duration;
            self.push(v.mean.clone(), gamma, min_sigma);
        }
        Ok(self.summary(name, t_start))
    }

    fn release(&mut self, steps: Option<usize>) -> PhaseResult {
        let t_start = self.clock;
        let steps = steps.unwrap_or(self.cfg.adapt.n_steps).max(1);
        let start = self.e.clone();
        let open = self.e_open.clone();
        for k in 1..=steps {
            let a = k as f64 / steps as f64;
            self.clock = t_start + a * steps as f64 * STEP_TIME;
            self.push(&start + (&open - &start) * a, 0.0, 0.0);
        }
        self.holding = None;
        Ok(self.summary("release".into(), t_start))
    }

    /// Sub-hand tasks merged by priority. Stage one brings held tasks to their coefficients,
    /// stage two grasps with the object tasks and stage three follows their ramps.
    fn prioritized(
        &mut self,
        tasks: &[TaskSpec],
        layout: &[DMatrix<f64>],
        steps: Option<usize>,
    ) -> PhaseResult {
        let t_start = self.clock;
        let steps = steps.unwrap_or(self.cfg.adapt.n_steps).max(1);
        let n_s = self.models.synergy.n_s();

        // targets per task over the three stages
        let mut hold_targets: Vec<DVector<f64>> = Vec::new();
        for (m, t) in tasks.iter().enumerate() {
            let cur = self.e.rows(m * n_s, n_s).into_owned();
            hold_targets.push(match &t.hold {
                Some(h) => {
                    if h.len() != n_s {
                        return Err(PhaseError::Other(Error::DimensionMismatch {
                            context: "hold coefficients",
                            expected: n_s,
                            got: h.len(),
                        }));
                    }
                    DVector::from_row_slice(h)
                }
                None => cur,
            });
        }
        let stage = |sim: &mut Sim,
                     targets: &[DVector<f64>],
                     moving: &[bool]|
         -> Result<Vec<DVector<f64>>> {
            let start = sim.e.clone();
            let times: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
            let mut prioritized_tasks = Vec::with_capacity(tasks.len());
            for (m, task) in tasks.iter().enumerate() {
                let points = times
                    .iter()
                    .map(|&a| {
                        let mut mean = start.clone();
                        let mut cov = DVector::from_element(start.len(), BROAD);
                        let s = start.rows(m * n_s, n_s).into_owned();
                        let target = if moving[m] {
                            &s + (&targets[m] - &s) * a
                        } else {
                            s
                        };
                        mean.rows_mut(m * n_s, n_s).copy_from(&target);
                        cov.rows_mut(m * n_s, n_s).fill(TIGHT);
                        ReferencePoint {
                            t: a,
                            mean,
                            cov: DMatrix::from_diagonal(&cov),
                        }
                    })
                    .collect();
                prioritized_tasks.push(PrioritizedTask::uniform(
                    ReferenceTrajectory::new(points)?,
                    task.priority,
                ));
            }
            let merged = prioritized_merge(&prioritized_tasks)?;
            Ok(merged.points().iter().map(|p| p.mean.clone()).collect())
        };

        // stage one: held tasks move to their scripted coefficients
        let moving: Vec<bool> = tasks.iter().map(|t| t.hold.is_some()).collect();
        for e in stage(self, &hold_targets, &moving)?.into_iter().skip(1) {
            self.clock += STEP_TIME;
            self.push(e, 0.0, 0.0);
        }

        // stage two: object tasks close on their objects and settle
        let mut grasps: Vec<Option<(PlannedGrasp, f64, f64)>> = vec![None; tasks.len()];
        let mut worst_tip: f64 = 0.0;
        for (m, task) in tasks.iter().enumerate() {
            let Some(obj) = task.object else { continue };
            let fingers = fingers_by_name(self.hand, &task.fingers)?;
            let object = self.objects[obj].clone();
            let e_start = self.e.clone();
            // close only this task's block
            let mut basis = DMatrix::zeros(self.hand.n_q(), n_s);
            basis.copy_from(&layout[m]);
            let offset_posture =
                self.posture(&e_start).theta - &layout[m] * e_start.rows(m * n_s, n_s);
            let (planned, closure, dir) = close_along_synergy(
                self.hand,
                &offset_posture,
                &basis,
                &e_start.rows(m * n_s, n_s).into_owned(),
                &object,
                &fingers,
                self.cfg.grasp.mu_f,
            )?;
            let mut target = e_start.clone();
            let b = target.rows(m * n_s, n_s) + &dir * closure;
            target.rows_mut(m * n_s, n_s).copy_from(&b);
            let mut moving = vec![false; tasks.len()];
            moving[m] = true;
            let mut targets = hold_targets.clone();
            targets[m] = b;
            for e in stage(self, &targets, &moving)?.into_iter().skip(1) {
                self.clock += STEP_TIME;
                self.push(e, 0.0, 0.0);
            }
            let q = self.posture(&self.e);
            let tips = self.hand.contact_positions(&q, &planned.assignment)?;
            let worst = tips
                .iter()
                .map(|t| planned.object.signed_distance(t).abs())
                .fold(0.0, f64::max);
            worst_tip = worst_tip.max(worst);
            if worst > CONTACT_TOLERANCE {
                return Err(PhaseError::Adaptation(format!(
                    "task {} ends {:.3} mm from its object",
                    task.name,
                    worst * 1e3
                )));
            }
            let contacts = contacts_on(&planned.object, &tips, self.cfg.grasp.mu_f)?;
            let wrench = load_wrench(&planned.object, self.cfg.grasp.gravity, None);
            let model = SoftSynergyGrasp::new(
                self.hand,
                &layout[m],
                &q,
                &ContactAssignment::fingertips(self.hand, &fingers)?,
                contacts.clone(),
                &planned.object.center(),
                &wrench,
                &self.cfg.grasp.params()?,
            )?;
            let result = model.descend(&DVector::zeros(n_s), &self.cfg.grasp.descent())?;
            let mut e = self.e.clone();
            let settled = e.rows(m * n_s, n_s) + DVector::from_row_slice(&result.offset);
            e.rows_mut(m * n_s, n_s).copy_from(&settled);
            self.clock += self.cfg.grasp.dt * result.history.len() as f64;
            self.push(e, result.report.gamma, result.report.min_margin);
            if !result.success {
                return Err(PhaseError::Stability(format!(
                    "task {} grasp is not stable",
                    task.name
                )));
            }
            hold_targets[m] = settled;
            grasps[m] = Some((
                PlannedGrasp {
                    contacts,
                    posture: q,
                    ..planned
                },
                result.report.gamma,
                result.report.min_margin,
            ));
        }
        let (gamma, min_sigma) = grasps
            .iter()
            .flatten()
            .fold((0.0, f64::INFINITY), |(g, s), (_, gg, ss)| {
                (g + gg, s.min(*ss))
            });
        let min_sigma = if min_sigma.is_finite() {
            min_sigma
        } else {
            0.0
        };

        // stage three: object tasks follow their ramps while held tasks stay put
        let mut targets = hold_targets.clone();
        let mut moving = vec![false; tasks.len()];
        for (m, task) in tasks.iter().enumerate() {
            if let Some(r) = &task.ramp {
                if r.from.len() != n_s || r.to.len() != n_s {
                    return Err(PhaseError::Other(Error::DimensionMismatch {
                        context: "task ramp",
                        expected: n_s,
                        got: r.from.len(),
                    }));
                }
                targets[m] = &hold_targets[m] + DVector::from_row_slice(&r.to)
                    - DVector::from_row_slice(&r.from);
                moving[m] = true;
            }
        }
        let before = self.e.clone();
        let mut drift: f64 = 0.0;
        for e in stage(self, &targets, &moving)?.into_iter().skip(1) {
            for (m, mv) in moving.iter().enumerate() {
                if !mv {
                    let d = (e.rows(m * n_s, n_s) - before.rows(m * n_s, n_s)).amax();
                    drift = drift.max(d);
                }
            }
            self.clock += STEP_TIME;
            self.push(e, gamma, min_sigma);
        }
        let mut summary = self.summary("prioritized".into(), t_start);
        summary.gamma = Some(gamma);
        summary.min_sigma = Some(min_sigma);
        summary.max_tip_distance = Some(worst_tip);
        summary.hold_drift = Some(drift);
        Ok(summary)
    }
}

/// Basis restricted to the joints of `fingers`.
fn masked_basis(hand: &HandModel, basis: &DMatrix<f64>, fingers: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(basis.nrows(), basis.ncols());
    for &f in fingers {
        for j in hand.joint_range(f) {
            out.set_row(j, &basis.row(j));
        }
    }
    out
}

/// Execute every phase in order, stopping at the first failure.
pub fn simulate(
    spec: &ScenarioSpec,
    hand: &HandModel,
    models: &TrainedModels,
    cfg: &PipelineConfig,
) -> Result<RunTrace> {
    spec.validate()?;
    let objects = spec
        .objects
        .iter()
        .map(ObjectPrimitive::from_file)
        .collect::<Result<Vec<_>>>()?;
    let synergy = &models.synergy;
    if synergy.n_q() != hand.n_q() {
        return Err(Error::DimensionMismatch {
            context: "trained model joints",
            expected: hand.n_q(),
            got: synergy.n_q(),
        });
    }
    let open_full = synergy.project(&JointConfig::zeros(hand.n_q()))?;

    let mut layout = Vec::new();
    let (basis, e_open) = match spec.phases.iter().find_map(|p| match p {
        Phase::Prioritized { tasks, .. } => Some(tasks),
        _ => None,
    }) {
        Some(tasks) => {
            let mut cols = Vec::new();
            let mut open = Vec::new();
            for t in tasks {
                let b = masked_basis(hand, synergy.basis(), &fingers_by_name(hand, &t.fingers)?);
                // coefficients that best open this sub-hand
                let (pinv, _) = linalg::pinv(&b);
                open.extend((&pinv * (-synergy.s0())).iter().copied());
                cols.extend(b.column_iter().map(|c| c.into_owned()));
                layout.push(b);
            }
            (DMatrix::from_columns(&cols), DVector::from_vec(open))
        }
        None => (synergy.basis().clone(), open_full),
    };

    let mut sim = Sim {
        hand,
        models,
        cfg,
        objects,
        basis,
        e: e_open.clone(),
        e_open,
        clock: 0.0,
        rows: Vec::new(),
        holding: None,
    };
    let n_e = sim.e.len();
    sim.push(sim.e.clone(), 0.0, 0.0);

    let mut summaries = Vec::new();
    let mut status = Status::Success;
    for phase in &spec.phases {
        let t_start = sim.clock;
        let outcome = match phase {
            Phase::Grasp {
                object,
                contacts,
                wrench,
            } => sim.grasp(*object, contacts, *wrench),
            Phase::Manipulate {
                goal, ramp, steps, ..
            } => sim.manipulate(phase.name(), goal, ramp, *steps),
            Phase::Release { steps } => sim.release(*steps),
            Phase::Prioritized { tasks, steps } => sim.prioritized(tasks, &layout, *steps),
        };
        match outcome {
            Ok(s) => summaries.push(s),
            Err(PhaseError::Other(e)) => return Err(e),
            Err(err) => {
                let (st, detail) = match err {
                    PhaseError::Stability(d) => (Status::StabilityFailure, d),
                    PhaseError::Adaptation(d) => (Status::AdaptationFailure, d),
                    PhaseError::Other(_) => unreachable!("handled above"),
                };
                log::warn!("phase {} failed: {detail}", phase.name());
                let mut s = sim.summary(phase.name(), t_start);
                s.ok = false;
                s.detail = detail;
                summaries.push(s);
                status = st;
                break;
            }
        }
    }
    Ok(RunTrace {
        scenario: spec.name.clone(),
        hand: hand.name().into(),
        status,
        n_e,
        rows: sim.rows,
        phases: summaries,
    })
}

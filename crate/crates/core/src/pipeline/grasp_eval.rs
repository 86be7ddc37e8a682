use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::GraspConfig;
use crate::error::{Error, Result};
use crate::grasp::{DescentResult, QualityReport, SoftSynergyGrasp};
use crate::hand::HandModel;
use crate::object::{
    fingers_by_name, plan_contacts, plan_with_fingers, ObjectFile, ObjectPrimitive, PlannedGrasp,
};

pub const GRASP_SCHEMA_VERSION: u32 = 1;

/// Contacts as a count for the planner or as an explicit list of finger names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContactRequest {
    Count(usize),
    Fingers(Vec<String>),
}

impl Default for ContactRequest {
    fn default() -> Self {
        ContactRequest::Count(3)
    }
}

impl ContactRequest {
    pub fn plan(
        &self,
        hand: &HandModel,
        object: &ObjectPrimitive,
        mu: f64,
    ) -> Result<PlannedGrasp> {
        match self {
            ContactRequest::Count(n) => plan_contacts(hand, object, *n, mu),
            ContactRequest::Fingers(names) => {
                plan_with_fingers(hand, object, &fingers_by_name(hand, names)?, mu)
            }
        }
    }
}

/// Grasp scenario file; unset parameters fall back to the pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspScenario {
    pub schema_version: u32,
    pub object: ObjectFile,
    #[serde(default)]
    pub contacts: ContactRequest,
    /// External load added to the object weight, `[f; τ]` about the object center.
    #[serde(default)]
    pub wrench: Option<[f64; 6]>,
    #[serde(default)]
    pub mu_f: Option<f64>,
    #[serde(default)]
    pub n_edges: Option<usize>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub kappa_q: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub max_iters: Option<usize>,
}

impl GraspScenario {
    pub fn new(object: &ObjectPrimitive, contacts: ContactRequest) -> Self {
        Self {
            schema_version: GRASP_SCHEMA_VERSION,
            object: object.to_file(),
            contacts,
            wrench: None,
            mu_f: None,
            n_edges: None,
            p: None,
            kappa_q: None,
            dt: None,
            max_iters: None,
        }
    }

    /// `base` with this scenario's parameters applied on top.
    pub fn apply(&self, base: &GraspConfig) -> GraspConfig {
        let mut cfg = base.clone();
        if let Some(v) = self.mu_f {
            cfg.mu_f = v;
        }
        if let Some(v) = self.n_edges {
            cfg.n_edges = v;
        }
        if let Some(v) = self.p {
            cfg.p = v;
        }
        if let Some(v) = self.kappa_q {
            cfg.kappa_q = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraspEvaluation {
    pub schema_version: u32,
    pub hand: String,
    pub fingers: Vec<String>,
    pub object: ObjectFile,
    pub posture: Vec<f64>,
    pub wrench_residual: f64,
    pub report: QualityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub descent: Option<DescentResult>,
    pub success: bool,
}

impl GraspEvaluation {
    /// Per-iteration CSV `iter,gamma,min_sigma,step_norm`; empty without a descent.
    pub fn descent_csv(&self) -> String {
        let mut out = String::from("iter,gamma,min_sigma,step_norm\n");
        for r in self.descent.iter().flat_map(|d| &d.history) {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.iter, r.gamma, r.min_margin, r.step_norm
            );
        }
        out
    }
}

/// Object weight plus an optional external load.
pub fn load_wrench(
    object: &ObjectPrimitive,
    gravity: f64,
    extra: Option<[f64; 6]>,
) -> DVector<f64> {
    let mut w = object.weight_wrench(gravity);
    if let Some(e) = extra {
        w += DVector::from_row_slice(&e);
    }
    w
}

/// Plan, evaluate and optionally optimize one grasp.
pub fn grasp_eval(
    hand: &HandModel,
    synergies: &DMatrix<f64>,
    scenario: &GraspScenario,
    cfg: &GraspConfig,
    optimize: bool,
) -> Result<GraspEvaluation> {
    if scenario.schema_version != GRASP_SCHEMA_VERSION {
        return Err(Error::schema(
            "schema_version",
            format!("unsupported version {}", scenario.schema_version),
        ));
    }
    let object = ObjectPrimitive::from_file(&scenario.object)?;
    let planned = scenario.contacts.plan(hand, &object, cfg.mu_f)?;
    let wrench = load_wrench(&planned.object, cfg.gravity, scenario.wrench);
    let grasp = SoftSynergyGrasp::new(
        hand,
        synergies,
        &planned.posture,
        &planned.assignment,
        planned.contacts.clone(),
        &planned.object.center(),
        &wrench,
        &cfg.params()?,
    )?;
    let start = DVector::zeros(synergies.ncols());
    let (report, descent) = if optimize {
        let d = grasp.descend(&start, &cfg.descent())?;
        (d.report.clone(), Some(d))
    } else {
        (grasp.report(&start)?, None)
    };
    let success = report.force_closure && report.min_margin >= cfg.p;
    Ok(GraspEvaluation {
        schema_version: GRASP_SCHEMA_VERSION,
        hand: hand.name().into(),
        fingers: planned
            .fingers
            .iter()
            .map(|&f| hand.fingers()[f].name.clone())
            .collect(),
        object: planned.object.to_file(),
        posture: planned.posture.theta.iter().copied().collect(),
        wrench_residual: grasp.wrench_residual(),
        report,
        descent,
        success,
    })
}

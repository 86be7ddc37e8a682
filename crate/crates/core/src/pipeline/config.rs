use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::grasp::{self, DescentConfig, FrictionPyramid, GraspParams, MotorModel};
use crate::object;
use crate::synergy::DEFAULT_VARIANCE_THRESHOLD;
use crate::traj::{kmp, SeKernel, DEFAULT_COMPONENTS};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Every tunable of the pipeline. Scenario JSON overrides these, command-line flags override both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub hand: String,
    pub demo: DemoConfig,
    pub train: TrainConfig,
    pub grasp: GraspConfig,
    pub adapt: AdaptConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            hand: crate::hand::BuiltinHand::Anthropomorphic20Dof.name().into(),
            demo: DemoConfig::default(),
            train: TrainConfig::default(),
            grasp: GraspConfig::default(),
            adapt: AdaptConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// Joint noise standard deviation in radians.
    pub noise_std: f64,
    pub samples: usize,
    pub duration: f64,
    /// Manipulation amplitude as a fraction of the mean closure.
    pub manipulation_amplitude: f64,
    pub n_contacts: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.01,
            samples: 101,
            duration: 2.0,
            manipulation_amplitude: 0.6,
            n_contacts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub threshold: f64,
    pub components: usize,
    pub per_phase: bool,
    pub kernel: SeKernel,
    pub lambda: f64,
    pub grid_points: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_VARIANCE_THRESHOLD,
            components: DEFAULT_COMPONENTS,
            per_phase: false,
            kernel: SeKernel::default(),
            lambda: kmp::DEFAULT_LAMBDA,
            grid_points: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspConfig {
    pub mu_f: f64,
    pub n_edges: usize,
    pub p: f64,
    pub kappa_q: f64,
    pub dt: f64,
    pub max_iters: usize,
    pub max_step: f64,
    pub pad_compliance: f64,
    pub motor_constant: f64,
    pub current_limit: f64,
    pub gravity: f64,
}

impl Default for GraspConfig {
    fn default() -> Self {
        Self {
            mu_f: grasp::DEFAULT_FRICTION,
            n_edges: grasp::DEFAULT_EDGES,
            p: grasp::DEFAULT_MARGIN,
            kappa_q: grasp::DEFAULT_KAPPA,
            dt: grasp::DEFAULT_DT,
            max_iters: grasp::DEFAULT_MAX_ITERS,
            max_step: grasp::DEFAULT_MAX_STEP,
            pad_compliance: grasp::DEFAULT_PAD_COMPLIANCE,
            motor_constant: grasp::DEFAULT_MOTOR_CONSTANT,
            current_limit: grasp::DEFAULT_CURRENT_LIMIT,
            gravity: 9.81,
        }
    }
}

impl GraspConfig {
    pub fn params(&self) -> Result<GraspParams> {
        Ok(GraspParams {
            pyramid: FrictionPyramid::new(self.n_edges, self.p)?,
            pad_compliance: self.pad_compliance,
            motor: MotorModel {
                k_m: self.motor_constant,
                current_limit: self.current_limit,
            },
        })
    }

    pub fn descent(&self) -> DescentConfig {
        DescentConfig {
            kappa_q: self.kappa_q,
            dt: self.dt,
            max_iters: self.max_iters,
            max_step: self.max_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub n_contacts: usize,
    pub preshape_fraction: f64,
    pub n_steps: usize,
    pub rollout_points: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            n_contacts: 3,
            preshape_fraction: 0.5,
            n_steps: object::DEFAULT_MANIPULATION_STEPS,
            rollout_points: 101,
        }
    }
}

impl PipelineConfig {
    /// Defaults overlaid with `overrides`, a (possibly partial) JSON object of the same shape.
    pub fn with_overrides(&self, overrides: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, overrides);
        let cfg: Self =
            serde_json::from_value(base).map_err(|e| Error::schema("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.train.threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::schema("train.threshold", "must lie in (0, 1]"));
        }
        if self.demo.samples < 2 || !(self.demo.duration > 0.0) {
            return Err(Error::schema(
                "demo",
                "need at least 2 samples over a positive duration",
            ));
        }
        if self.train.components == 0 || self.train.grid_points < 2 {
            return Err(Error::schema(
                "train",
                "components and grid_points must be positive",
            ));
        }
        if !(self.grasp.kappa_q < 0.0) {
            return Err(Error::schema("grasp.kappa_q", "must be negative"));
        }
        if !(0.0..=1.0).contains(&self.adapt.preshape_fraction) {
            return Err(Error::schema(
                "adapt.preshape_fraction",
                "must lie in [0, 1]",
            ));
        }
        if self.adapt.rollout_points < 2 {
            return Err(Error::schema(
                "adapt.rollout_points",
                "need at least 2 points",
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["schema_version"] = CONFIG_SCHEMA_VERSION.into();
        serde_json::to_string_pretty(&v).expect("config serializes")
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                if k == "schema_version" {
                    continue;
                }
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_are_deep_and_checked() {
        let cfg = PipelineConfig::default()
            .with_overrides(&json!({"grasp": {"p": 0.02}, "seed": 3}))
            .unwrap();
        assert_eq!(cfg.grasp.p, 0.02);
        assert_eq!(cfg.grasp.mu_f, grasp::DEFAULT_FRICTION);
        assert_eq!(cfg.seed, 3);
        assert!(PipelineConfig::default()
            .with_overrides(&json!({"grasp": {"q": 1}}))
            .is_err());
        assert!(PipelineConfig::default()
            .with_overrides(&json!({"train": {"threshold": 1.5}}))
            .is_err());
    }
}

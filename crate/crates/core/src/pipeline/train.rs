use std::path::Path;

use nalgebra::DVector;

use super::config::{PipelineConfig, TrainConfig};
use super::demo::{generate_demos, training_objects};
use super::io::{read_json, read_text, write_atomic, write_json};
use crate::error::{Error, Result};
use crate::hand::HandModel;
use crate::synergy::{extract_synergies, DemonstrationSet, SynergyModel, SynergyModelFile};
use crate::traj::{
    build_reference, fit_gmm, uniform_grid, GaussianComponent, GmmFile, GmmModel, KmpFile,
    KmpModel, ReferenceTrajectory,
};

pub const SYNERGY_FILE: &str = "synergy.json";
pub const GMM_FILE: &str = "gmm.json";
pub const KMP_FILE: &str = "kmp.json";
pub const REFERENCE_FILE: &str = "reference.csv";

/// Output of the full learning pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub synergy: SynergyModel,
    pub gmm: GmmModel,
    pub kmp: KmpModel,
    pub seed: u64,
}

impl TrainedModels {
    pub fn reference(&self) -> &ReferenceTrajectory {
        self.kmp.reference()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(SYNERGY_FILE), &self.synergy.to_file())?;
        write_json(&dir.join(GMM_FILE), &self.gmm.to_file(Some(self.seed)))?;
        write_json(&dir.join(KMP_FILE), &self.kmp.to_file())?;
        write_atomic(
            &dir.join(REFERENCE_FILE),
            self.reference().to_csv().as_bytes(),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let synergy =
            SynergyModel::from_file(&read_json::<SynergyModelFile>(&dir.join(SYNERGY_FILE))?)?;
        let gmm_file: GmmFile = read_json(&dir.join(GMM_FILE))?;
        let gmm = GmmModel::from_file(&gmm_file)?;
        let kmp = KmpModel::from_file(&read_json::<KmpFile>(&dir.join(KMP_FILE))?)?;
        if gmm.n_s() != synergy.n_s() || kmp.reference().n_s() != synergy.n_s() {
            return Err(Error::schema(
                dir.display().to_string(),
                "model files disagree on the synergy count",
            ));
        }
        Ok(Self {
            synergy,
            gmm,
            kmp,
            seed: gmm_file.seed.unwrap_or(0),
        })
    }

    pub fn load_reference_csv(dir: &Path) -> Result<ReferenceTrajectory> {
        ReferenceTrajectory::from_csv(&read_text(&dir.join(REFERENCE_FILE))?)
    }
}

/// `(t, e)` rows of every demonstration sample, optionally restricted to one phase.
pub fn synergy_samples(
    demos: &DemonstrationSet,
    model: &SynergyModel,
    phase: Option<&str>,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::new();
    for d in demos.demos() {
        for s in &d.samples {
            let t = s.timestamp.unwrap_or(0.0);
            if phase.is_some_and(|p| d.phase_at(t) != Some(p)) {
                continue;
            }
            let e = model.project(s)?;
            let mut row = DVector::zeros(e.len() + 1);
            row[0] = t;
            row.rows_mut(1, e.len()).copy_from(&e);
            out.push(row);
        }
    }
    Ok(out)
}

/// PCA gate, then GMM/GMR over the synergy coefficients, then the KMP reference.
pub fn train(
    demos: &DemonstrationSet,
    limits: Option<Vec<[f64; 2]>>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedModels> {
    let mut synergy = extract_synergies(demos, cfg.threshold)?;
    if let Some(l) = limits {
        synergy = synergy.with_limits(l)?;
    }
    log::info!(
        "{} synergies explain {:.1}% of the variance",
        synergy.n_s(),
        100.0 * synergy.explained_variance()
    );
    let gmm = if cfg.per_phase {
        fit_per_phase(demos, &synergy, cfg.components, seed)?
    } else {
        let samples = synergy_samples(demos, &synergy, None)?;
        fit_gmm(&samples, cfg.components, seed)?.model
    };
    let reference = build_reference(&gmm, &uniform_grid(cfg.grid_points))?;
    let kmp = KmpModel::new(reference, cfg.kernel, cfg.lambda)?;
    Ok(TrainedModels {
        synergy,
        gmm,
        kmp,
        seed,
    })
}

/// One mixture per phase, concatenated with weights scaled by each phase's sample share.
fn fit_per_phase(
    demos: &DemonstrationSet,
    synergy: &SynergyModel,
    components: usize,
    seed: u64,
) -> Result<GmmModel> {
    let mut names: Vec<String> = Vec::new();
    for d in demos.demos() {
        for p in &d.phases {
            if !names.contains(&p.name) {
                names.push(p.name.clone());
            }
        }
    }
    if names.is_empty() {
        return Err(Error::InvalidInput(
            "per-phase training needs phase markers".into(),
        ));
    }
    let total = demos.pooled().len() as f64;
    let dim = synergy.n_s() + 1;
    let mut comps = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let samples = synergy_samples(demos, synergy, Some(name))?;
        if samples.is_empty() {
            continue;
        }
        let n = components.min(samples.len() / (dim + 1)).max(1);
        let fit = fit_gmm(&samples, n, seed.wrapping_add(k as u64))?;
        let share = samples.len() as f64 / total;
        for c in fit.model.components() {
            comps.push(GaussianComponent {
                weight: c.weight * share,
                ..c.clone()
            });
        }
    }
    let sum: f64 = comps.iter().map(|c| c.weight).sum();
    for c in &mut comps {
        c.weight /= sum;
    }
    GmmModel::new(comps)
}

/// Generate the synthetic training set for `hand` and train on it.
pub fn train_synthetic(hand: &HandModel, cfg: &PipelineConfig) -> Result<TrainedModels> {
    let demos = generate_demos(hand, &training_objects(), &cfg.demo, cfg.seed)?;
    train(&demos, Some(hand.limits()), &cfg.train, cfg.seed)
}

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::mix_seed;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::training::{Target, TrainPlan};

/// Partial plan: anything left out falls back to the target's defaults and, for the
/// seed, to the run seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanOverrides {
    pub total_steps: Option<usize>,
    pub align_steps: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub log_every: Option<usize>,
}

impl PlanOverrides {
    fn resolve(&self, target: Target, run_seed: u64) -> TrainPlan {
        let d = TrainPlan::for_target(target);
        TrainPlan {
            total_steps: self.total_steps.unwrap_or(d.total_steps),
            align_steps: self.align_steps.unwrap_or(d.align_steps),
            lr: self.lr.unwrap_or(d.lr),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            batch: self.batch.unwrap_or(d.batch),
            // each target draws its own stream from the run seed
            seed: self
                .seed
                .unwrap_or_else(|| mix_seed(run_seed, 0x504C_414E, target as u64)),
            log_every: self.log_every.unwrap_or(d.log_every),
            ..d
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSet {
    pub mae: PlanOverrides,
    pub decoder: PlanOverrides,
    pub cfm: PlanOverrides,
    pub mfm: PlanOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_root: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_root: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            output_dir: "out".into(),
        }
    }
}

/// Everything a command needs, as read from the JSON config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub plans: PlanSet,
    pub paths: Paths,
    /// Number of pairs (the last ones in stem order) kept out of training.
    pub holdout: usize,
    /// Square center crop applied to every pair before training; `None` keeps full size.
    pub crop: Option<usize>,
}

/// The fully defaulted configuration, echoed next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub plans: ResolvedPlans,
    pub paths: Paths,
    pub holdout: usize,
    pub crop: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPlans {
    pub mae: TrainPlan,
    pub decoder: TrainPlan,
    pub cfm: TrainPlan,
    pub mfm: TrainPlan,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies defaults and checks every cross-field constraint.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        self.model.validate()?;
        self.loss.validate()?;
        let plans = ResolvedPlans {
            mae: self.plans.mae.resolve(Target::EncoderMae, self.seed),
            decoder: self.plans.decoder.resolve(Target::Decoder, self.seed),
            cfm: self.plans.cfm.resolve(Target::Cfm, self.seed),
            mfm: self.plans.mfm.resolve(Target::Mfm, self.seed),
        };
        for p in [&plans.mae, &plans.decoder, &plans.cfm, &plans.mfm] {
            p.validate()
                .map_err(|e| Error::Config(format!("plan {:?}: {e}", p.target)))?;
        }
        if let Some(c) = self.crop {
            if c == 0 || c % self.model.patch != 0 {
                return Err(Error::Config(format!(
                    "crop {c} must be a positive multiple of patch {}",
                    self.model.patch
                )));
            }
        }
        Ok(ResolvedConfig {
            seed: self.seed,
            model: self.model.clone(),
            loss: self.loss,
            plans,
            paths: self.paths.clone(),
            holdout: self.holdout,
            crop: self.crop,
        })
    }
}

impl ResolvedConfig {
    pub fn write_echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("resolved_config.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .map_err(|e| Error::io(&path, e))
    }
}

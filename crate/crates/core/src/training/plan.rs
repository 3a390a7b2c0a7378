use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Group;

/// What a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    EncoderMae,
    Decoder,
    Cfm,
    Mfm,
}

impl Target {
    /// Groups updated by the optimizer.
    pub fn trainable(self) -> &'static [Group] {
        match self {
            Target::EncoderMae => &[Group::Encoder, Group::Decoder],
            Target::Decoder => &[Group::Decoder],
            Target::Cfm => &[Group::Cfm],
            Target::Mfm => &[Group::Mfm, Group::Ffn],
        }
    }

    /// Groups that must already be frozen before the run starts.
    pub fn prerequisites(self) -> &'static [Group] {
        match self {
            Target::EncoderMae => &[],
            Target::Decoder => &[Group::Encoder],
            Target::Cfm => &[Group::Encoder, Group::Decoder],
            Target::Mfm => &[Group::Encoder, Group::Decoder, Group::Cfm],
        }
    }

    pub fn is_guided(self) -> bool {
        matches!(self, Target::Cfm | Target::Mfm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adamw,
}

/// Step schedule and optimizer settings of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub target: Target,
    pub total_steps: usize,
    /// Steps spent on the feature-alignment objective before switching to the fusion
    /// loss; zero outside guided training.
    pub align_steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Progress is reported through `log` every this many steps.
    pub log_every: usize,
}

impl TrainPlan {
    /// Defaults for `target`: 100 steps with a 20-step alignment stage for the fusion
    /// modules, lr 1e-4, weight decay 0.05, batch 4.
    pub fn for_target(target: Target) -> Self {
        let (total_steps, align_steps) = match target {
            Target::EncoderMae => (200, 0),
            Target::Decoder => (500, 0),
            Target::Cfm | Target::Mfm => (100, 20),
        };
        Self {
            target,
            total_steps,
            align_steps,
            lr: 1e-4,
            weight_decay: 0.05,
            batch: 4,
            seed: 0,
            optimizer: OptimizerKind::Adamw,
            log_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.align_steps > self.total_steps {
            return fail(format!(
                "align_steps {} exceeds total_steps {}",
                self.align_steps, self.total_steps
            ));
        }
        if self.align_steps > 0 && !self.target.is_guided() {
            return fail(format!("{:?} training has no alignment stage", self.target));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch == 0 {
            return fail("batch must be positive".into());
        }
        if self.log_every == 0 {
            return fail("log_every must be positive".into());
        }
        Ok(())
    }
}

//! Training regimes: masked-autoencoder pretraining, decoder pretraining, guided
//! two-stage training of the fusion modules and the hierarchical CFM → MFM schedule.
//!
//! Every run is driven by a [`TrainPlan`] and is deterministic given its seed and data.
//! Only groups that the plan targets and that are not frozen are handed to the
//! optimizer, so frozen arrays are never written.

mod eval;
mod log;
mod loops;
mod optim;
mod plan;

pub use eval::{fused_image, mean_fusion_loss, reconstruction_psnr, FusionSource};
pub use log::{LogRecord, Stage, TrainLog};
pub use loops::{
    guided_train, guided_train_observed, hierarchical_train, hierarchical_train_observed,
    joint_fusion_train,
    pretrain_decoder, pretrain_decoder_observed, pretrain_encoder_mae,
    pretrain_encoder_mae_observed, Observer,
};
pub use optim::{AdamW, AdamWConfig};
pub use plan::{OptimizerKind, Target, TrainPlan};
// checkpoints are shared with the model module
pub use crate::model::{load_checkpoint, load_groups, save_checkpoint};

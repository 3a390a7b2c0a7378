use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// Architecture hyperparameters shared by encoder, fusion layer and decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub patch: usize,
    pub embed_dim: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub use_cls: bool,
    pub mask_ratio: f64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small model that trains on a CPU in minutes.
    pub fn desk() -> Self {
        Self {
            patch: 8,
            embed_dim: 128,
            encoder_depth: 4,
            decoder_depth: 4,
            heads: 4,
            mlp_ratio: 2.0,
            use_cls: false,
            mask_ratio: 0.75,
            precision: Precision::F32,
        }
    }

    /// MAE-large sized encoder (24 blocks, 1024 wide, 16×16 patches).
    pub fn mae_large() -> Self {
        Self {
            patch: 16,
            embed_dim: 1024,
            encoder_depth: 24,
            decoder_depth: 4,
            heads: 16,
            mlp_ratio: 4.0,
            use_cls: false,
            mask_ratio: 0.75,
            precision: Precision::F32,
        }
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64) * self.mlp_ratio).round() as usize
    }

    pub fn dtype(&self) -> DType {
        self.precision.dtype()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch == 0 {
            return fail("patch must be positive".into());
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return fail(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.embed_dim % 4 != 0 {
            return fail(format!(
                "embed_dim {} must be a multiple of 4 for 2D sin-cos positions",
                self.embed_dim
            ));
        }
        if self.encoder_depth == 0 || self.decoder_depth == 0 {
            return fail("encoder_depth and decoder_depth must be at least 1".into());
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return fail(format!("mlp_ratio {} gives an empty MLP", self.mlp_ratio));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return fail(format!("mask_ratio {} outside [0, 1)", self.mask_ratio));
        }
        Ok(())
    }
}

use std::collections::BTreeSet;
use std::fmt;

use candle_core::{Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::layers::{Block, CrossAttention, LayerNorm, Linear, Mlp, ParamFactory, Visit};
use crate::error::{Error, Result};

/// Independently freezable parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Encoder,
    Cfm,
    Mfm,
    Ffn,
    Decoder,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Encoder,
        Group::Cfm,
        Group::Mfm,
        Group::Ffn,
        Group::Decoder,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::Cfm => "cfm",
            Group::Mfm => "mfm",
            Group::Ffn => "ffn",
            Group::Decoder => "decoder",
        }
    }

    pub fn parse(s: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.as_str() == s)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub patch_embed: Linear,
    pub cls: Var,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
}

/// Comparative fusion module: one cross-attention stack applied in both directions
/// (shared weights keep the two branches symmetric), followed by an MLP residual.
#[derive(Debug, Clone)]
pub struct CfmParams {
    pub cross: CrossAttention,
    pub norm: LayerNorm,
    pub mlp: Mlp,
}

/// Merging fusion module: the comparative output queries each modality.
#[derive(Debug, Clone)]
pub struct MfmParams {
    pub cross_v: CrossAttention,
    pub cross_i: CrossAttention,
}

#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub mask_token: Var,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub head: Linear,
}

/// All learnable arrays of the network plus per-group frozen flags.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub encoder: EncoderParams,
    pub cfm: CfmParams,
    pub mfm: MfmParams,
    pub ffn: Mlp,
    pub decoder: DecoderParams,
    frozen: BTreeSet<Group>,
}

impl ModelParams {
    /// Seeded initialization: truncated normal (σ = 0.02) projections, unit/zero layer
    /// norms, and zero attention output projections inside the fusion modules.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let hidden = cfg.mlp_hidden();
        let p2 = cfg.patch * cfg.patch;
        let mut f = ParamFactory::new(seed, cfg.dtype());

        let encoder = EncoderParams {
            patch_embed: Linear::new(&mut f, p2, d)?,
            cls: f.trunc_normal(&[1, 1, d], 0.02)?,
            blocks: (0..cfg.encoder_depth)
                .map(|_| Block::new(&mut f, d, cfg.heads, hidden))
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(&mut f, d)?,
        };
        let cfm = CfmParams {
            cross: CrossAttention::new(&mut f, d, cfg.heads)?,
            norm: LayerNorm::new(&mut f, d)?,
            mlp: Mlp::new(&mut f, d, hidden)?,
        };
        let mfm = MfmParams {
            cross_v: CrossAttention::new(&mut f, d, cfg.heads)?,
            cross_i: CrossAttention::new(&mut f, d, cfg.heads)?,
        };
        let ffn = Mlp::new(&mut f, d, hidden)?;
        let decoder = DecoderParams {
            mask_token: f.trunc_normal(&[1, 1, d], 0.02)?,
            blocks: (0..cfg.decoder_depth)
                .map(|_| Block::new(&mut f, d, cfg.heads, hidden))
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(&mut f, d)?,
            head: Linear::new(&mut f, d, p2)?,
        };
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            cfm,
            mfm,
            ffn,
            decoder,
            frozen: BTreeSet::new(),
        })
    }

    /// Every array with its qualified name and owning group, in a fixed order.
    pub fn named_vars(&self) -> Vec<(String, Group, &Var)> {
        let mut all = Vec::new();
        for g in Group::ALL {
            all.extend(
                self.group_vars(g)
                    .into_iter()
                    .map(|(name, v)| (name, g, v)),
            );
        }
        all
    }

    pub fn group_vars(&self, group: Group) -> Vec<(String, &Var)> {
        let mut out = Vec::new();
        let prefix = group.as_str();
        match group {
            Group::Encoder => {
                let e = &self.encoder;
                e.patch_embed.visit(&format!("{prefix}.patch_embed"), &mut out);
                out.push((format!("{prefix}.cls"), &e.cls));
                for (k, b) in e.blocks.iter().enumerate() {
                    b.visit(&format!("{prefix}.blocks.{k}"), &mut out);
                }
                e.norm.visit(&format!("{prefix}.norm"), &mut out);
            }
            Group::Cfm => {
                self.cfm.cross.visit(&format!("{prefix}.cross"), &mut out);
                self.cfm.norm.visit(&format!("{prefix}.norm"), &mut out);
                self.cfm.mlp.visit(&format!("{prefix}.mlp"), &mut out);
            }
            Group::Mfm => {
                self.mfm.cross_v.visit(&format!("{prefix}.cross_v"), &mut out);
                self.mfm.cross_i.visit(&format!("{prefix}.cross_i"), &mut out);
            }
            Group::Ffn => self.ffn.visit(prefix, &mut out),
            Group::Decoder => {
                let d = &self.decoder;
                out.push((format!("{prefix}.mask_token"), &d.mask_token));
                for (k, b) in d.blocks.iter().enumerate() {
                    b.visit(&format!("{prefix}.blocks.{k}"), &mut out);
                }
                d.norm.visit(&format!("{prefix}.norm"), &mut out);
                d.head.visit(&format!("{prefix}.head"), &mut out);
            }
        }
        out
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.named_vars()
            .into_iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, v)| v)
    }

    pub fn is_frozen(&self, group: Group) -> bool {
        self.frozen.contains(&group)
    }

    pub fn set_frozen(&mut self, group: Group, frozen: bool) {
        if frozen {
            self.frozen.insert(group);
        } else {
            self.frozen.remove(&group);
        }
    }

    pub fn freeze(&mut self, group: Group) {
        self.set_frozen(group, true);
    }

    pub fn frozen_groups(&self) -> Vec<Group> {
        self.frozen.iter().copied().collect()
    }

    /// Deep copy: the clone owns fresh storage, unlike `Clone` which shares it.
    pub fn duplicate(&self) -> Result<Self> {
        let copy = self.clone();
        // Var clones share storage; rebind every array to its own buffer.
        let mut out = Self::init(&self.cfg, 0)?;
        out.frozen = copy.frozen.clone();
        for ((_, _, dst), (_, _, src)) in out.named_vars().into_iter().zip(copy.named_vars()) {
            dst.set(&src.as_tensor().copy()?)?;
        }
        Ok(out)
    }

    /// Flattened copy of every array of `group`, in visit order, as f64.
    pub fn snapshot(&self, group: Group) -> Result<Vec<Vec<f64>>> {
        self.group_vars(group)
            .into_iter()
            .map(|(_, v)| {
                Ok(v.as_tensor()
                    .flatten_all()?
                    .to_dtype(candle_core::DType::F64)?
                    .to_vec1::<f64>()?)
            })
            .collect()
    }

    /// Raw bytes of every array of `group` in native storage precision.
    pub fn group_bits(&self, group: Group) -> Result<Vec<Vec<u8>>> {
        self.group_vars(group)
            .into_iter()
            .map(|(_, v)| tensor_le_bytes(v.as_tensor()))
            .collect()
    }

    /// Zeroes every array of `group` (handy for residual-identity checks).
    pub fn zero_group(&self, group: Group) -> Result<()> {
        for (_, v) in self.group_vars(group) {
            v.set(&v.as_tensor().zeros_like()?)?;
        }
        Ok(())
    }

    /// Overwrites every array of `group` with seeded Gaussian values.
    pub fn randomize_group(&self, group: Group, seed: u64, std: f64) -> Result<()> {
        let mut f = ParamFactory::new(seed, self.cfg.dtype());
        for (name, v) in self.group_vars(group) {
            let r = f.trunc_normal(v.dims(), std)?;
            let r = if name.ends_with(".scale") {
                // layer-norm scales stay near one
                (r.as_tensor() + 1.0)?
            } else {
                r.as_tensor().clone()
            };
            v.set(&r)?;
        }
        Ok(())
    }

    /// Configures the fusion layer so that `Φ_D = Φ_M = Φ_F = (Φ_I + Φ_V)/2` exactly.
    pub fn set_mean_passthrough(&self) -> Result<()> {
        let zero = |l: &Linear| -> Result<()> {
            l.weight.set(&l.weight.as_tensor().zeros_like()?)?;
            l.bias.set(&l.bias.as_tensor().zeros_like()?)?;
            Ok(())
        };
        zero(&self.cfm.cross.attn.out)?;
        zero(&self.cfm.mlp.fc2)?;
        zero(&self.mfm.cross_v.attn.out)?;
        zero(&self.mfm.cross_i.attn.out)?;
        zero(&self.ffn.fc2)?;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.named_vars().iter().map(|(_, _, v)| v.elem_count()).sum()
    }
}

pub(crate) fn tensor_le_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        candle_core::DType::F64 => flat
            .to_vec1::<f64>()?
            .into_iter()
            .flat_map(f64::to_le_bytes)
            .collect(),
        _ => flat
            .to_dtype(candle_core::DType::F32)?
            .to_vec1::<f32>()?
            .into_iter()
            .flat_map(f32::to_le_bytes)
            .collect(),
    })
}

pub(crate) fn cpu() -> Device {
    Device::Cpu
}

pub(crate) fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    let s = t
        .to_dtype(candle_core::DType::F64)?
        .abs()?
        .sum_all()?
        .to_scalar::<f64>()?;
    if !s.is_finite() {
        return Err(Error::Numerical(format!("{what} contains non-finite values")));
    }
    Ok(())
}

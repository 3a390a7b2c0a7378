use serde::{Deserialize, Serialize};

use crate::data::Pair;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::losses::{loss_fusion_total, LossWeights};
use crate::metrics::psnr_from_mse;
use crate::model::{decode, encode, fuse_tokens, FusionPath, ModelParams};

/// Which fused image is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionSource {
    /// `decode(Φ_D)`: CFM output straight to the decoder.
    CfmOnly,
    /// `decode(Φ_F)`: the full fusion layer.
    Full,
    /// `decode((Φ_V + Φ_I)/2)`: the feature-mean baseline.
    FeatureMean,
}

/// Fused image of one gray pair under `source` (decoder output, clamped to unit range).
pub fn fused_image(pair: &Pair, params: &ModelParams, source: FusionSource) -> Result<Image> {
    let v = pair.visible.crop_to_multiple(params.cfg.patch)?;
    let i = pair.infrared.crop_to_multiple(params.cfg.patch)?;
    let phi_v = encode(&v, params)?;
    let phi_i = encode(&i, params)?;
    let fused = match source {
        FusionSource::FeatureMean => phi_v.mean_with(&phi_i)?,
        FusionSource::CfmOnly => fuse_tokens(&phi_i, &phi_v, params, FusionPath::CfmOnly)?.fused,
        FusionSource::Full => fuse_tokens(&phi_i, &phi_v, params, FusionPath::Full)?.fused,
    };
    Ok(decode(&fused, params)?.remove(0))
}

/// Mean fusion loss of `source` over `pairs`.
pub fn mean_fusion_loss(
    pairs: &[Pair],
    params: &ModelParams,
    source: FusionSource,
    weights: LossWeights,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("no pairs to score".into()));
    }
    let mut total = 0.0;
    for p in pairs {
        let f = fused_image(p, params, source)?;
        let v = p.visible.crop_to_multiple(params.cfg.patch)?;
        let i = p.infrared.crop_to_multiple(params.cfg.patch)?;
        total += loss_fusion_total(&f, &v, &i, weights)?.0;
    }
    Ok(total / pairs.len() as f64)
}

/// Mean PSNR (8-bit peak) of `decode(encode(x))` against `x`.
pub fn reconstruction_psnr(images: &[Image], params: &ModelParams) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Data("no images to reconstruct".into()));
    }
    let mut total = 0.0;
    for img in images {
        let x = img.crop_to_multiple(params.cfg.patch)?;
        let r = decode(&encode(&x, params)?, params)?.remove(0);
        let (a, b) = (r.values(), x.to_range(crate::imaging::Range::Unit).values());
        let mse = a
            .iter()
            .zip(&b)
            .map(|(p, q)| ((p - q) * 255.0).powi(2))
            .sum::<f64>()
            / a.len() as f64;
        total += psnr_from_mse(mse);
    }
    Ok(total / images.len() as f64)
}

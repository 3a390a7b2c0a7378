//! Training objectives: decoder reconstruction, the intensity + gradient + Laplacian
//! fusion loss, and feature alignment. All reductions are means; images are in `[0, 1]`.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, Range};
use crate::model::{images_to_tensor, TokenSequence};

/// Weights of the gradient (`alpha`) and Laplacian (`beta`) terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Scalar tensors of the fusion loss and its terms.
#[derive(Debug, Clone)]
pub struct FusionLossTerms {
    pub total: Tensor,
    pub intensity: Tensor,
    pub gradient: Tensor,
    pub laplacian: Tensor,
}

/// Plain values of the fusion loss terms, for logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionComponents {
    pub total: f64,
    pub intensity: f64,
    pub gradient: f64,
    pub laplacian: f64,
}

impl FusionLossTerms {
    pub fn values(&self) -> Result<FusionComponents> {
        Ok(FusionComponents {
            total: scalar(&self.total)?,
            intensity: scalar(&self.intensity)?,
            gradient: scalar(&self.gradient)?,
            laplacian: scalar(&self.laplacian)?,
        })
    }
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn same_dims(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Replicate-padded 3×3 correlation of a `[B, H, W]` batch, built from shifted views so it
/// stays differentiable.
fn correlate3(x: &Tensor, kernel: &[[f64; 3]; 3]) -> Result<Tensor> {
    let (_, h, w) = x.dims3()?;
    let padded = x.pad_with_same(1, 1, 1)?.pad_with_same(2, 1, 1)?;
    let mut acc: Option<Tensor> = None;
    for (dy, row) in kernel.iter().enumerate() {
        for (dx, &k) in row.iter().enumerate() {
            if k == 0.0 {
                continue;
            }
            let term = (padded.narrow(1, dy, h)?.narrow(2, dx, w)? * k)?;
            acc = Some(match acc {
                None => term,
                Some(a) => (a + term)?,
            });
        }
    }
    Ok(acc.expect("kernel has non-zero taps"))
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
const LAPLACIAN: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

/// `|∇x|` on a `[B, H, W]` batch. The squared magnitude is floored at 1e-30 before the
/// square root so flat regions have a zero (not NaN) gradient.
pub fn sobel_magnitude_t(x: &Tensor) -> Result<Tensor> {
    let gx = correlate3(x, &SOBEL_X)?;
    let gy = correlate3(x, &SOBEL_Y)?;
    Ok((gx.sqr()? + gy.sqr()?)?.maximum(1e-30)?.sqrt()?)
}

/// `|Δx|` on a `[B, H, W]` batch.
pub fn laplacian_magnitude_t(x: &Tensor) -> Result<Tensor> {
    Ok(correlate3(x, &LAPLACIAN)?.abs()?)
}

/// Mean absolute reconstruction error.
pub fn loss_decoder_t(recon: &Tensor, original: &Tensor) -> Result<Tensor> {
    same_dims(recon, original)?;
    Ok((recon - original)?.abs()?.mean_all()?)
}

/// `L_int + α·L_grad + β·L_lap` against the elementwise maxima of the sources.
pub fn loss_fusion_t(f: &Tensor, v: &Tensor, i: &Tensor, w: LossWeights) -> Result<FusionLossTerms> {
    same_dims(f, v)?;
    same_dims(f, i)?;
    let intensity = (f - v.maximum(i)?)?.abs()?.mean_all()?;
    let grad_target = sobel_magnitude_t(v)?.maximum(&sobel_magnitude_t(i)?)?;
    let gradient = (sobel_magnitude_t(f)? - grad_target)?.abs()?.mean_all()?;
    let lap_target = laplacian_magnitude_t(v)?.maximum(&laplacian_magnitude_t(i)?)?;
    let laplacian = (laplacian_magnitude_t(f)? - lap_target)?.abs()?.mean_all()?;
    let total = ((&intensity + (&gradient * w.alpha)?)? + (&laplacian * w.beta)?)?;
    Ok(FusionLossTerms {
        total,
        intensity,
        gradient,
        laplacian,
    })
}

/// Mean squared distance between `out` and the feature mean `(Φ_I + Φ_V)/2`.
pub fn loss_align_t(out: &Tensor, phi_i: &Tensor, phi_v: &Tensor) -> Result<Tensor> {
    same_dims(out, phi_i)?;
    same_dims(out, phi_v)?;
    let target = ((phi_i + phi_v)? * 0.5)?;
    Ok((out - target)?.sqr()?.mean_all()?)
}

fn unit_tensor(imgs: &[&Image]) -> Result<Vec<Tensor>> {
    imgs.iter()
        .map(|img| images_to_tensor(&[&img.to_range(Range::Unit)], DType::F64))
        .collect()
}

/// Decoder loss on images (computed in unit range, f64).
pub fn loss_decoder(recon: &Image, original: &Image) -> Result<f64> {
    recon.same_gray_shape(original)?;
    let t = unit_tensor(&[recon, original])?;
    scalar(&loss_decoder_t(&t[0], &t[1])?)
}

/// Fusion loss on images (computed in unit range, f64), with its components.
pub fn loss_fusion_total(f: &Image, v: &Image, i: &Image, w: LossWeights) -> Result<(f64, FusionComponents)> {
    f.same_gray_shape(v)?;
    f.same_gray_shape(i)?;
    let t = unit_tensor(&[f, v, i])?;
    let c = loss_fusion_t(&t[0], &t[1], &t[2], w)?.values()?;
    Ok((c.total, c))
}

/// Alignment loss on token sequences.
pub fn loss_align(out: &TokenSequence, phi_i: &TokenSequence, phi_v: &TokenSequence) -> Result<f64> {
    out.same_layout(phi_i)?;
    out.same_layout(phi_v)?;
    scalar(&loss_align_t(&out.tokens, &phi_i.tokens, &phi_v.tokens)?)
}

//! Forward passes: encoder, fusion layer (CFM, MFM, FFN residual), decoder, masking and
//! feature probes.

use candle_core::{DType, Tensor, D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{sincos_positions, Block};
use super::params::{check_finite, cpu, ModelParams};
use crate::error::{Error, Result};
use crate::imaging::{convert_colorspace, luma, ColorSpace, GridShape, Image, Range};

/// Patch embeddings `[batch, n (+1 with CLS), dim]` with their grid layout.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub grid: GridShape,
    pub has_cls: bool,
}

impl TokenSequence {
    pub fn new(tokens: Tensor, grid: GridShape, has_cls: bool) -> Result<Self> {
        let (_, n, _) = tokens.dims3()?;
        let expected = grid.tokens() + usize::from(has_cls);
        if n != expected {
            return Err(Error::shape(format!(
                "{n} tokens for a {}x{} grid{}",
                grid.rows,
                grid.cols,
                if has_cls { " plus CLS" } else { "" }
            )));
        }
        Ok(Self {
            tokens,
            grid,
            has_cls,
        })
    }

    pub fn batch(&self) -> usize {
        self.tokens.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.tokens.dims()[2]
    }

    /// Tokens without the CLS slot.
    pub fn spatial(&self) -> Result<Tensor> {
        if self.has_cls {
            Ok(self.tokens.narrow(1, 1, self.grid.tokens())?)
        } else {
            Ok(self.tokens.clone())
        }
    }

    pub fn without_cls(&self) -> Result<TokenSequence> {
        Ok(TokenSequence {
            tokens: self.spatial()?,
            grid: self.grid,
            has_cls: false,
        })
    }

    pub fn with_tokens(&self, tokens: Tensor) -> Result<TokenSequence> {
        TokenSequence::new(tokens, self.grid, self.has_cls)
    }

    pub fn detach(&self) -> TokenSequence {
        TokenSequence {
            tokens: self.tokens.detach(),
            grid: self.grid,
            has_cls: self.has_cls,
        }
    }

    pub fn same_layout(&self, other: &TokenSequence) -> Result<()> {
        if self.tokens.dims() != other.tokens.dims()
            || self.grid != other.grid
            || self.has_cls != other.has_cls
        {
            return Err(Error::shape(format!(
                "token sequences differ: {:?} vs {:?}",
                self.tokens.dims(),
                other.tokens.dims()
            )));
        }
        Ok(())
    }

    /// Elementwise mean of two sequences with the same layout.
    pub fn mean_with(&self, other: &TokenSequence) -> Result<TokenSequence> {
        self.same_layout(other)?;
        self.with_tokens(((&self.tokens + &other.tokens)? * 0.5)?)
    }

    /// Elementwise max of two sequences with the same layout.
    pub fn max_with(&self, other: &TokenSequence) -> Result<TokenSequence> {
        self.same_layout(other)?;
        self.with_tokens(self.tokens.maximum(&other.tokens)?)
    }
}

/// Which tokens an MAE step keeps; `mask_flags[i] == true` means token `i` is hidden.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub kept_indices: Vec<usize>,
    pub mask_flags: Vec<bool>,
}

impl MaskPlan {
    pub fn masked_indices(&self) -> Vec<usize> {
        self.mask_flags
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.then_some(i))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.mask_flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask_flags.is_empty()
    }
}

/// Uniformly samples `round((1 − mask_ratio)·n)` tokens to keep, without replacement.
pub fn random_mask(n: usize, mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&mask_ratio) {
        return Err(Error::Config(format!("mask_ratio {mask_ratio} outside [0, 1)")));
    }
    let keep = ((1.0 - mask_ratio) * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut kept_indices = order[..keep].to_vec();
    kept_indices.sort_unstable();
    let mut mask_flags = vec![true; n];
    for &k in &kept_indices {
        mask_flags[k] = false;
    }
    Ok(MaskPlan {
        kept_indices,
        mask_flags,
    })
}

/// Stacks gray images into a `[batch, H, W]` tensor in unit range.
pub fn images_to_tensor(images: &[&Image], dtype: DType) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::shape("no images to stack"))?;
    let (h, w) = first.dims();
    let mut vals = Vec::with_capacity(images.len() * h * w);
    for img in images {
        img.require_gray()?;
        if img.dims() != (h, w) {
            return Err(Error::shape(format!(
                "batch mixes {h}x{w} with {}x{}",
                img.height(),
                img.width()
            )));
        }
        vals.extend(img.to_range(Range::Unit).data().iter().copied());
    }
    Ok(Tensor::from_vec(vals, (images.len(), h, w), &cpu())?.to_dtype(dtype)?)
}

/// Splits a `[batch, H, W]` tensor into unit-range gray images (values are clamped).
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let (b, h, w) = t.dims3()?;
    let flat = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    (0..b)
        .map(|k| Image::gray(h, w, flat[k * h * w..(k + 1) * h * w].to_vec(), Range::Unit))
        .collect()
}

/// `[B, H, W] → [B, rows·cols, patch²]`, row-major patches flattened row-major.
pub fn patchify_tensor(x: &Tensor, patch: usize) -> Result<(Tensor, GridShape)> {
    let (b, h, w) = x.dims3()?;
    let grid = GridShape::for_image(h, w, patch)?;
    let t = x
        .reshape((b, grid.rows, patch, grid.cols, patch))?
        .permute((0, 1, 3, 2, 4))?
        .contiguous()?
        .reshape((b, grid.tokens(), patch * patch))?;
    Ok((t, grid))
}

/// Inverse of [`patchify_tensor`].
pub fn unpatchify_tensor(t: &Tensor, grid: GridShape) -> Result<Tensor> {
    let (b, n, d) = t.dims3()?;
    if n != grid.tokens() || d != grid.token_dim() {
        return Err(Error::shape(format!(
            "{n}x{d} patches do not fit grid {}x{} with patch {}",
            grid.rows, grid.cols, grid.patch
        )));
    }
    let p = grid.patch;
    Ok(t.reshape((b, grid.rows, grid.cols, p, p))?
        .permute((0, 1, 3, 2, 4))?
        .contiguous()?
        .reshape((b, grid.height(), grid.width()))?)
}

/// One pre-norm transformer block with a finiteness guard on its input.
pub fn transformer_block(t: &TokenSequence, block: &Block) -> Result<TokenSequence> {
    check_finite(&t.tokens, "transformer block input")?;
    t.with_tokens(block.forward(&t.tokens)?)
}

fn positions(params: &ModelParams, grid: GridShape) -> Result<Tensor> {
    sincos_positions(grid.rows, grid.cols, params.cfg.embed_dim, params.cfg.dtype())
}

fn embed(x: &Tensor, params: &ModelParams) -> Result<(Tensor, GridShape)> {
    let (patches, grid) = patchify_tensor(x, params.cfg.patch)?;
    let emb = params
        .encoder
        .patch_embed
        .forward(&patches)?
        .broadcast_add(&positions(params, grid)?)?;
    Ok((emb, grid))
}

fn prepend_cls(t: Tensor, params: &ModelParams) -> Result<Tensor> {
    if !params.cfg.use_cls {
        return Ok(t);
    }
    let (b, _, d) = t.dims3()?;
    let cls = params.encoder.cls.as_tensor().broadcast_as((b, 1, d))?;
    Ok(Tensor::cat(&[&cls, &t], 1)?)
}

/// Encoder truncated after `depth` blocks (final norm always applied).
pub fn encode_to_depth(x: &Tensor, params: &ModelParams, depth: usize) -> Result<TokenSequence> {
    if depth > params.encoder.blocks.len() {
        return Err(Error::Config(format!(
            "layer {depth} exceeds encoder depth {}",
            params.encoder.blocks.len()
        )));
    }
    let (emb, grid) = embed(x, params)?;
    let mut t = prepend_cls(emb, params)?;
    for block in &params.encoder.blocks[..depth] {
        t = block.forward(&t)?;
    }
    let t = params.encoder.norm.forward(&t)?;
    TokenSequence::new(t, grid, params.cfg.use_cls)
}

/// Full encoder on a `[B, H, W]` batch.
pub fn encode_tensor(x: &Tensor, params: &ModelParams) -> Result<TokenSequence> {
    encode_to_depth(x, params, params.encoder.blocks.len())
}

/// Encodes one gray image; the same encoder serves both modalities.
pub fn encode(img: &Image, params: &ModelParams) -> Result<TokenSequence> {
    img.require_gray()?;
    let x = images_to_tensor(&[img], params.cfg.dtype())?;
    check_finite(&x, "encoder input")?;
    encode_tensor(&x, params)
}

/// Encoder pass over only the kept tokens of `plan`.
pub fn encode_masked(x: &Tensor, params: &ModelParams, plan: &MaskPlan) -> Result<Tensor> {
    let (emb, grid) = embed(x, params)?;
    if plan.len() != grid.tokens() {
        return Err(Error::shape(format!(
            "mask plan covers {} tokens, grid has {}",
            plan.len(),
            grid.tokens()
        )));
    }
    let kept = index_tensor(&plan.kept_indices)?;
    let mut t = prepend_cls(emb.index_select(&kept, 1)?, params)?;
    for block in &params.encoder.blocks {
        t = block.forward(&t)?;
    }
    Ok(params.encoder.norm.forward(&t)?)
}

fn index_tensor(idx: &[usize]) -> Result<Tensor> {
    let v: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
    Ok(Tensor::from_vec(v, idx.len(), &cpu())?)
}

/// Decoder head on spatial tokens: `[B, n, dim] → [B, n, patch²]`.
fn decode_patches(tokens: &Tensor, params: &ModelParams) -> Result<Tensor> {
    let mut t = tokens.clone();
    for block in &params.decoder.blocks {
        t = block.forward(&t)?;
    }
    let t = params.decoder.norm.forward(&t)?;
    params.decoder.head.forward(&t)
}

/// Reassembles the full grid from kept latents plus mask tokens and predicts every patch,
/// `[B, n, patch²]`.
pub fn decode_masked(
    latent: &Tensor,
    plan: &MaskPlan,
    grid: GridShape,
    params: &ModelParams,
) -> Result<Tensor> {
    let (b, k, d) = latent.dims3()?;
    let latent = if params.cfg.use_cls {
        latent.narrow(1, 1, k - 1)?
    } else {
        latent.clone()
    };
    let masked = plan.masked_indices();
    let mut order = plan.kept_indices.clone();
    order.extend(&masked);
    let mut restore = vec![0usize; order.len()];
    for (slot, &tok) in order.iter().enumerate() {
        restore[tok] = slot;
    }
    let full = if masked.is_empty() {
        latent
    } else {
        let pos = positions(params, grid)?.index_select(&index_tensor(&masked)?, 0)?;
        let fill = pos
            .broadcast_add(&params.decoder.mask_token.as_tensor().squeeze(0)?)?
            .unsqueeze(0)?
            .broadcast_as((b, masked.len(), d))?;
        Tensor::cat(&[&latent, &fill], 1)?
    };
    let full = full.index_select(&index_tensor(&restore)?, 1)?;
    decode_patches(&full, params)
}

/// Unclamped decoder output `[B, H, W]`; used inside training losses.
pub fn decode_raw(phi: &TokenSequence, params: &ModelParams) -> Result<Tensor> {
    let patches = decode_patches(&phi.spatial()?, params)?;
    unpatchify_tensor(&patches, phi.grid)
}

/// Decodes a sequence to unit-range gray images (clamped).
pub fn decode(phi: &TokenSequence, params: &ModelParams) -> Result<Vec<Image>> {
    tensor_to_images(&decode_raw(phi, params)?.clamp(0.0, 1.0)?)
}

/// Comparative fusion: symmetric cross-attention `A = Φ_I + CA(Φ_I, Φ_V)`,
/// `B = Φ_V + CA(Φ_V, Φ_I)`, `Φ_D = m + MLP(LN(m))` with `m = (A + B)/2`.
pub fn cfm_forward(
    phi_i: &TokenSequence,
    phi_v: &TokenSequence,
    params: &ModelParams,
) -> Result<TokenSequence> {
    phi_i.same_layout(phi_v)?;
    let (ti, tv) = (&phi_i.tokens, &phi_v.tokens);
    let cfm = &params.cfm;
    let a = (cfm.cross.forward(ti, tv)? + ti)?;
    let b = (cfm.cross.forward(tv, ti)? + tv)?;
    let m = ((a + b)? * 0.5)?;
    let out = (cfm.mlp.forward(&cfm.norm.forward(&m)?)? + m)?;
    phi_i.with_tokens(out)
}

fn cosine(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let dot = (a * b)?.sum_keepdim(D::Minus1)?;
    let na = a.sqr()?.sum_keepdim(D::Minus1)?;
    let nb = b.sqr()?.sum_keepdim(D::Minus1)?;
    Ok(dot.broadcast_div(&((na * nb)? + 1e-12)?.sqrt()?)?)
}

/// Per-token modality gates `(g_V, g_I)`: softmax over the two cosine similarities to `Φ_D`.
pub fn mfm_gates(
    phi_i: &TokenSequence,
    phi_v: &TokenSequence,
    phi_d: &TokenSequence,
) -> Result<(Tensor, Tensor)> {
    let cv = cosine(&phi_d.tokens, &phi_v.tokens)?;
    let ci = cosine(&phi_d.tokens, &phi_i.tokens)?;
    let m = cv.maximum(&ci)?.detach();
    let ev = (cv - &m)?.exp()?;
    let ei = (ci - &m)?.exp()?;
    let s = (&ev + &ei)?;
    Ok(((ev / &s)?, (ei / s)?))
}

/// Merging fusion: `Φ_M = Φ_D + g_V⊙CA_V(Φ_D, Φ_V) + g_I⊙CA_I(Φ_D, Φ_I)`.
pub fn mfm_forward(
    phi_i: &TokenSequence,
    phi_v: &TokenSequence,
    phi_d: &TokenSequence,
    params: &ModelParams,
) -> Result<TokenSequence> {
    phi_i.same_layout(phi_v)?;
    phi_i.same_layout(phi_d)?;
    let (gv, gi) = mfm_gates(phi_i, phi_v, phi_d)?;
    let av = params.mfm.cross_v.forward(&phi_d.tokens, &phi_v.tokens)?;
    let ai = params.mfm.cross_i.forward(&phi_d.tokens, &phi_i.tokens)?;
    let out = ((&phi_d.tokens + av.broadcast_mul(&gv)?)? + ai.broadcast_mul(&gi)?)?;
    phi_d.with_tokens(out)
}

/// `Φ_F = Φ_M + FFN(Φ_M)`.
pub fn ffn_forward(phi_m: &TokenSequence, params: &ModelParams) -> Result<TokenSequence> {
    phi_m.with_tokens((params.ffn.forward(&phi_m.tokens)? + &phi_m.tokens)?)
}

/// Which part of the fusion layer feeds the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionPath {
    /// `Φ_D` goes straight to the decoder; MFM and FFN are bypassed.
    CfmOnly,
    /// CFM → MFM → FFN residual.
    Full,
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub phi_d: TokenSequence,
    /// Output handed to the decoder (`Φ_D` on the CFM-only path, `Φ_F` otherwise).
    pub fused: TokenSequence,
}

pub fn fuse_tokens(
    phi_i: &TokenSequence,
    phi_v: &TokenSequence,
    params: &ModelParams,
    path: FusionPath,
) -> Result<FusionOutput> {
    let phi_d = cfm_forward(phi_i, phi_v, params)?;
    let fused = match path {
        FusionPath::CfmOnly => phi_d.clone(),
        FusionPath::Full => {
            let phi_m = mfm_forward(phi_i, phi_v, &phi_d, params)?;
            ffn_forward(&phi_m, params)?
        }
    };
    Ok(FusionOutput { phi_d, fused })
}

/// Complete fusion layer, `Φ_F`.
pub fn fuse_features(
    phi_i: &TokenSequence,
    phi_v: &TokenSequence,
    params: &ModelParams,
) -> Result<TokenSequence> {
    Ok(fuse_tokens(phi_i, phi_v, params, FusionPath::Full)?.fused)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorMode {
    /// Return the fused luma plane.
    Gray,
    /// Re-attach the visible image's chroma; the result is a YCbCr image.
    YcbcrReattach,
}

/// Fuses a registered visible/infrared pair. Inputs are center-cropped to a multiple of
/// the patch size; the output uses the visible image's range.
pub fn fuse_images(
    visible: &Image,
    infrared: &Image,
    params: &ModelParams,
    mode: ColorMode,
    path: FusionPath,
) -> Result<Image> {
    if visible.dims() != infrared.dims() {
        return Err(Error::shape(format!(
            "visible {}x{} vs infrared {}x{}",
            visible.height(),
            visible.width(),
            infrared.height(),
            infrared.width()
        )));
    }
    let patch = params.cfg.patch;
    let visible = visible.crop_to_multiple(patch)?;
    let y = luma(&visible)?;
    let ir = luma(&infrared.crop_to_multiple(patch)?)?;
    let phi_v = encode(&y, params)?;
    let phi_i = encode(&ir, params)?;
    let fused = fuse_tokens(&phi_i, &phi_v, params, path)?.fused;
    let fy = decode(&fused, params)?.remove(0);
    match mode {
        ColorMode::Gray => Ok(fy.to_range(visible.range())),
        ColorMode::YcbcrReattach => {
            let ycc = match visible.colorspace() {
                ColorSpace::Rgb => convert_colorspace(&visible, ColorSpace::YCbCr)?,
                ColorSpace::YCbCr => visible.clone(),
                ColorSpace::Gray => {
                    return Err(Error::InvalidConversion {
                        from: "gray".into(),
                        to: "ycbcr".into(),
                    })
                }
            };
            let mut data = ycc.into_data();
            let fy = fy.to_range(visible.range());
            data.index_axis_mut(ndarray::Axis(2), 0)
                .assign(&fy.data().index_axis(ndarray::Axis(2), 0));
            Image::new(data, visible.range(), ColorSpace::YCbCr)
        }
    }
}

/// Elementwise combination used by the feature probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    Mean,
    Max,
}

/// Encodes both images through the first `layer` encoder blocks, merges the tokens by
/// `mode` and decodes the result.
pub fn probe_feature_fusion(
    visible: &Image,
    infrared: &Image,
    params: &ModelParams,
    layer: usize,
    mode: ProbeMode,
) -> Result<Image> {
    if layer > params.cfg.encoder_depth {
        return Err(Error::Config(format!(
            "probe layer {layer} outside 0..={}",
            params.cfg.encoder_depth
        )));
    }
    visible.same_gray_shape(infrared)?;
    let dtype = params.cfg.dtype();
    let v = encode_to_depth(&images_to_tensor(&[visible], dtype)?, params, layer)?;
    let i = encode_to_depth(&images_to_tensor(&[infrared], dtype)?, params, layer)?;
    let merged = match mode {
        ProbeMode::Mean => v.mean_with(&i)?,
        ProbeMode::Max => v.max_with(&i)?,
    };
    Ok(decode(&merged, params)?.remove(0))
}

/// Probe at every depth `0..=encoder_depth`.
pub fn probe_layer_sweep(
    visible: &Image,
    infrared: &Image,
    params: &ModelParams,
    mode: ProbeMode,
) -> Result<Vec<Image>> {
    (0..=params.cfg.encoder_depth)
        .map(|layer| probe_feature_fusion(visible, infrared, params, layer, mode))
        .collect()
}

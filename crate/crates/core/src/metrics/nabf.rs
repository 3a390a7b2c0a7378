use std::f64::consts::FRAC_PI_2;

use crate::error::Result;
use crate::imaging::{sobel_xy, Image, Range};

// Edge-preservation sigmoid constants.
const GAMMA_G: f64 = 0.9994;
const KAPPA_G: f64 = -15.0;
const SIGMA_G: f64 = 0.5;
const GAMMA_A: f64 = 0.9879;
const KAPPA_A: f64 = -22.0;
const SIGMA_A: f64 = 0.8;
/// Exponent of the edge-strength weights.
pub const WEIGHT_EXPONENT: f64 = 1.5;

pub(crate) struct EdgeMap {
    pub strength: Vec<f64>,
    pub orientation: Vec<f64>,
}

pub(crate) fn orientation(gx: f64, gy: f64) -> f64 {
    if gx == 0.0 {
        if gy == 0.0 {
            0.0
        } else {
            FRAC_PI_2
        }
    } else {
        (gy / gx).atan()
    }
}

pub(crate) fn edges(img: &Image) -> Result<EdgeMap> {
    let (gx, gy) = sobel_xy(&img.to_range(Range::Unit))?;
    let strength = gx.iter().zip(gy.iter()).map(|(x, y)| x.hypot(*y)).collect();
    let orientation = gx
        .iter()
        .zip(gy.iter())
        .map(|(x, y)| orientation(*x, *y))
        .collect();
    Ok(EdgeMap {
        strength,
        orientation,
    })
}

/// Edge preservation `Q^{SF}` of source edge `(gs, as)` in fused edge `(gf, af)`.
pub(crate) fn preservation(gs: f64, as_: f64, gf: f64, af: f64) -> f64 {
    let hi = gs.max(gf);
    let g = if hi == 0.0 { 1.0 } else { gs.min(gf) / hi };
    let a = 1.0 - (as_ - af).abs() / FRAC_PI_2;
    let qg = GAMMA_G / (1.0 + (KAPPA_G * (g - SIGMA_G)).exp());
    let qa = GAMMA_A / (1.0 + (KAPPA_A * (a - SIGMA_A)).exp());
    qg * qa
}

/// Fusion-artifact measure: weighted share of locations where the fused edge is stronger
/// than both source edges, scaled by how poorly it preserves each of them.
pub fn nabf(f: &Image, v: &Image, i: &Image) -> Result<f64> {
    f.same_gray_shape(v)?;
    f.same_gray_shape(i)?;
    let (ef, ev, ei) = (edges(f)?, edges(v)?, edges(i)?);
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..ef.strength.len() {
        let (gf, gv, gi) = (ef.strength[k], ev.strength[k], ei.strength[k]);
        let w = gv.powf(WEIGHT_EXPONENT) + gi.powf(WEIGHT_EXPONENT);
        den += w;
        if gf > gv && gf > gi {
            let qv = preservation(gv, ev.orientation[k], gf, ef.orientation[k]);
            let qi = preservation(gi, ei.orientation[k], gf, ef.orientation[k]);
            num += (1.0 - qv) * (1.0 - qi) * w;
        }
    }
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

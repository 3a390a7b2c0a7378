use ndarray::{Array3, Zip};

use super::{ColorSpace, Image, Range};
use crate::error::{Error, Result};

// BT.601 full-range coefficients. Chroma is centered on the middle of the range.
const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

fn rgb_to_ycbcr_unit(r: f64, g: f64, b: f64) -> [f64; 3] {
    let y = KR * r + KG * g + KB * b;
    let cb = 0.5 + (b - y) / (2.0 * (1.0 - KB));
    let cr = 0.5 + (r - y) / (2.0 * (1.0 - KR));
    [y, cb, cr]
}

fn ycbcr_to_rgb_unit(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    let r = y + 2.0 * (1.0 - KR) * (cr - 0.5);
    let b = y + 2.0 * (1.0 - KB) * (cb - 0.5);
    let g = (y - KR * r - KB * b) / KG;
    [r, g, b]
}

/// Converts between `rgb ↔ ycbcr` or `rgb → gray`, preserving the declared range.
pub fn convert_colorspace(img: &Image, target: ColorSpace) -> Result<Image> {
    let from = img.colorspace();
    let invalid = || Error::InvalidConversion {
        from: from.to_string(),
        to: target.to_string(),
    };
    let range = img.range();
    let unit = img.to_range(Range::Unit);
    let (h, w, _) = unit.data().dim();
    let src = unit.data();
    let out = match (from, target) {
        (ColorSpace::Rgb, ColorSpace::YCbCr) | (ColorSpace::YCbCr, ColorSpace::Rgb) => {
            let forward = from == ColorSpace::Rgb;
            let mut out = Array3::zeros((h, w, 3));
            Zip::from(out.rows_mut())
                .and(src.rows())
                .for_each(|mut o, p| {
                    let v = if forward {
                        rgb_to_ycbcr_unit(p[0], p[1], p[2])
                    } else {
                        ycbcr_to_rgb_unit(p[0], p[1], p[2])
                    };
                    o[0] = v[0];
                    o[1] = v[1];
                    o[2] = v[2];
                });
            out
        }
        (ColorSpace::Rgb, ColorSpace::Gray) => {
            let mut out = Array3::zeros((h, w, 1));
            Zip::from(out.rows_mut())
                .and(src.rows())
                .for_each(|mut o, p| o[0] = KR * p[0] + KG * p[1] + KB * p[2]);
            out
        }
        _ => return Err(invalid()),
    };
    Ok(Image::new(out, Range::Unit, target)?.to_range(range))
}

/// Luma plane of an rgb or ycbcr image; gray images are returned unchanged.
pub fn luma(img: &Image) -> Result<Image> {
    match img.colorspace() {
        ColorSpace::Gray => Ok(img.clone()),
        ColorSpace::YCbCr => img.channel(0),
        ColorSpace::Rgb => convert_colorspace(img, ColorSpace::Gray),
    }
}

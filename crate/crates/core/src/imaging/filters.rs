use ndarray::{Array2, Array3, Zip};

use super::{ColorSpace, Image, Range};
use crate::error::{Error, Result};

pub(crate) const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub(crate) const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
pub(crate) const LAPLACIAN: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];

/// 3×3 correlation with replicate padding. Every kernel here sums to zero, so taps are
/// applied to differences from the centre pixel; flat regions then give exactly 0.
fn correlate3(img: &Image, kernel: &[[f64; 3]; 3]) -> Array2<f64> {
    let (h, w) = img.dims();
    let data = img.data();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let centre = data[[y, x, 0]];
        let mut acc = 0.0;
        for (ky, row) in kernel.iter().enumerate() {
            let yy = (y + ky).saturating_sub(1).min(h - 1);
            for (kx, k) in row.iter().enumerate() {
                if *k != 0.0 {
                    let xx = (x + kx).saturating_sub(1).min(w - 1);
                    acc += k * (data[[yy, xx, 0]] - centre);
                }
            }
        }
        acc
    })
}

fn derived_image(values: Array2<f64>) -> Image {
    let hi = values.iter().copied().fold(0.0, f64::max);
    let (h, w) = values.dim();
    let data = values.into_shape_with_order((h, w, 1)).expect("same size");
    Image::new(data, Range::Span { lo: 0.0, hi }, ColorSpace::Gray).expect("gray")
}

/// Horizontal and vertical Sobel responses (unnormalized kernels, replicate border).
pub fn sobel_xy(img: &Image) -> Result<(Array2<f64>, Array2<f64>)> {
    img.require_gray()?;
    Ok((correlate3(img, &SOBEL_X), correlate3(img, &SOBEL_Y)))
}

/// `sqrt(gx² + gy²)`; the output range is `[0, max]` of the result.
pub fn sobel_magnitude(img: &Image) -> Result<Image> {
    let (gx, gy) = sobel_xy(img)?;
    let mag = Zip::from(&gx).and(&gy).map_collect(|a, b| a.hypot(*b));
    Ok(derived_image(mag))
}

/// Absolute response of the 4-neighbour Laplacian, replicate border.
pub fn laplacian_magnitude(img: &Image) -> Result<Image> {
    img.require_gray()?;
    Ok(derived_image(correlate3(img, &LAPLACIAN).mapv(f64::abs)))
}

/// Per-pixel maximum of two registered gray images.
pub fn max_fuse(v: &Image, i: &Image) -> Result<Image> {
    v.same_gray_shape(i)?;
    if v.range() != i.range() {
        return Err(Error::shape("max_fuse inputs declare different ranges"));
    }
    let data: Array3<f64> = Zip::from(v.data())
        .and(i.data())
        .map_collect(|a, b| a.max(*b));
    Image::new(data, v.range(), ColorSpace::Gray)
}

use crate::error::Result;
use crate::imaging::{Image, Range};

/// Pearson correlation; defined as 0 when either operand is constant.
pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let constant = |x: &[f64]| x.iter().all(|v| *v == x[0]);
    if a.is_empty() || constant(a) || constant(b) {
        return 0.0;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

pub(crate) fn unit_values(img: &Image) -> Vec<f64> {
    img.to_range(Range::Unit).values()
}

fn check(f: &Image, v: &Image, i: &Image) -> Result<()> {
    f.same_gray_shape(v)?;
    f.same_gray_shape(i)
}

/// Mean Pearson correlation of the fused image with each source.
pub fn cc(f: &Image, v: &Image, i: &Image) -> Result<f64> {
    check(f, v, i)?;
    let (f, v, i) = (unit_values(f), unit_values(v), unit_values(i));
    Ok((pearson(&f, &v) + pearson(&f, &i)) / 2.0)
}

/// Sum of the correlations of differences: `r(F − V, I) + r(F − I, V)`.
pub fn scd(f: &Image, v: &Image, i: &Image) -> Result<f64> {
    check(f, v, i)?;
    let (f, v, i) = (unit_values(f), unit_values(v), unit_values(i));
    let fv: Vec<f64> = f.iter().zip(&v).map(|(a, b)| a - b).collect();
    let fi: Vec<f64> = f.iter().zip(&i).map(|(a, b)| a - b).collect();
    Ok(pearson(&fv, &i) + pearson(&fi, &v))
}

pub const PSNR_CAP_DB: f64 = 100.0;

/// PSNR on the 8-bit scale against the mean of the two source MSEs, capped at 100 dB.
pub fn psnr(f: &Image, v: &Image, i: &Image) -> Result<f64> {
    check(f, v, i)?;
    let (f, v, i) = (unit_values(f), unit_values(v), unit_values(i));
    let mse = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| ((x - y) * 255.0).powi(2))
            .sum::<f64>()
            / a.len() as f64
    };
    Ok(psnr_from_mse((mse(&f, &v) + mse(&f, &i)) / 2.0))
}

/// `10·log10(255² / mse)` for a byte-scale MSE, with the 100 dB cap.
pub fn psnr_from_mse(mse: f64) -> f64 {
    let peak = 255.0f64 * 255.0;
    if mse < peak * 1e-10 {
        PSNR_CAP_DB
    } else {
        10.0 * (peak / mse).log10()
    }
}

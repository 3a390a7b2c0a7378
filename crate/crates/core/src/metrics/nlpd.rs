use ndarray::Array2;

use crate::error::{Error, Result};
use crate::imaging::{Image, Range};

pub const DEFAULT_LEVELS: usize = 4;
/// Stabilizer added to the local activity before divisive normalization.
pub const SIGMA: f64 = 0.17;
const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn blur(x: &Array2<f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let rows = Array2::from_shape_fn((h, w), |(y, xx)| {
        BINOMIAL
            .iter()
            .enumerate()
            .map(|(k, c)| c * x[[y, clamp(xx as isize + k as isize - 2, w)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(y, xx)| {
        BINOMIAL
            .iter()
            .enumerate()
            .map(|(k, c)| c * rows[[clamp(y as isize + k as isize - 2, h), xx]])
            .sum()
    })
}

fn reduce(x: &Array2<f64>) -> Array2<f64> {
    let b = blur(x);
    let (h, w) = x.dim();
    Array2::from_shape_fn((h.div_ceil(2), w.div_ceil(2)), |(y, xx)| b[[2 * y, 2 * xx]])
}

fn expand(x: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let mut up = Array2::zeros((h, w));
    for ((y, xx), v) in x.indexed_iter() {
        if 2 * y < h && 2 * xx < w {
            up[[2 * y, 2 * xx]] = *v;
        }
    }
    blur(&up) * 4.0
}

/// Divisively normalized Laplacian pyramid bands, finest first.
pub(crate) fn normalized_pyramid(img: &Array2<f64>, levels: usize) -> Vec<Array2<f64>> {
    let mut gauss = vec![img.clone()];
    for _ in 1..levels {
        let next = reduce(gauss.last().expect("non-empty"));
        gauss.push(next);
    }
    (0..levels)
        .map(|k| {
            let band = if k + 1 < levels {
                let (h, w) = gauss[k].dim();
                &gauss[k] - &expand(&gauss[k + 1], h, w)
            } else {
                gauss[k].clone()
            };
            let activity = blur(&band.mapv(f64::abs)) + SIGMA;
            band / activity
        })
        .collect()
}

fn as_array(img: &Image) -> Array2<f64> {
    let u = img.to_range(Range::Unit);
    Array2::from_shape_vec(u.dims(), u.values()).expect("gray image")
}

/// Mean over levels of the RMS difference between normalized bands.
pub(crate) fn distance(a: &[Array2<f64>], b: &[Array2<f64>]) -> f64 {
    let per_level: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            (d.mapv(|v| v * v).sum() / d.len() as f64).sqrt()
        })
        .sum();
    per_level / a.len() as f64
}

/// NLPD averaged over the two sources, using `levels` pyramid levels.
pub fn nlpd_with_levels(f: &Image, v: &Image, i: &Image, levels: usize) -> Result<f64> {
    f.same_gray_shape(v)?;
    f.same_gray_shape(i)?;
    let min_side = 1usize << levels;
    if levels == 0 || f.height() < min_side || f.width() < min_side {
        return Err(Error::Config(format!(
            "{}x{} image is too small for {levels} pyramid levels (needs {min_side})",
            f.height(),
            f.width()
        )));
    }
    let pf = normalized_pyramid(&as_array(f), levels);
    let pv = normalized_pyramid(&as_array(v), levels);
    let pi = normalized_pyramid(&as_array(i), levels);
    Ok((distance(&pf, &pv) + distance(&pf, &pi)) / 2.0)
}

/// NLPD with the default four levels.
pub fn nlpd(f: &Image, v: &Image, i: &Image) -> Result<f64> {
    nlpd_with_levels(f, v, i, DEFAULT_LEVELS)
}

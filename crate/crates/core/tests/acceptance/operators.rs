use maefuse::imaging::{
    convert_colorspace, laplacian_magnitude, patchify, sobel_magnitude, unpatchify, ColorSpace,
    Image, Range,
};
use ndarray::Array3;
use rand::Rng;

use crate::support::{exclusive, noise, rng, verdict, Timer};

/// Replicate-padded pixel access.
pub fn px(img: &Image, y: isize, x: isize) -> f64 {
    let (h, w) = img.dims();
    let yy = y.clamp(0, h as isize - 1) as usize;
    let xx = x.clamp(0, w as isize - 1) as usize;
    img.at(yy, xx)
}

/// Direct 3×3 correlation, written out tap by tap.
pub fn correlate(img: &Image, k: [[f64; 3]; 3]) -> Vec<f64> {
    let (h, w) = img.dims();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = 0.0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    s += k[(dy + 1) as usize][(dx + 1) as usize] * px(img, y + dy, x + dx);
                }
            }
            out.push(s);
        }
    }
    out
}

pub fn sobel_oracle(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let gx = correlate(img, [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]);
    let gy = correlate(img, [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]]);
    (gx, gy)
}

pub fn sobel_mag_oracle(img: &Image) -> Vec<f64> {
    let (gx, gy) = sobel_oracle(img);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect()
}

pub fn laplacian_oracle(img: &Image) -> Vec<f64> {
    correlate(img, [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
        .into_iter()
        .map(f64::abs)
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Image {
    Image::gray(h, w, (0..h * w).map(|k| f(k / w, k % w)).collect(), Range::Unit).unwrap()
}

/// BT.601 full-range forward transform with the usual published coefficients.
fn ycbcr_oracle(r: f64, g: f64, b: f64) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        0.5 - 0.168_735_891_647_856 * r - 0.331_264_108_352_144 * g + 0.5 * b,
        0.5 + 0.5 * r - 0.418_687_589_158_97 * g - 0.081_312_410_841_03 * b,
    ]
}

#[test]
fn criterion_01_operator_oracles() {
    let _serial = exclusive();
    let timer = Timer::start();
    let mut r = rng(101);
    let mut failures = Vec::new();

    let mut sobel_err: f64 = 0.0;
    let mut lap_err: f64 = 0.0;
    for _ in 0..40 {
        let (h, w) = (r.random_range(3..24), r.random_range(3..24));
        let img = noise(h, w, &mut r);
        sobel_err = sobel_err.max(max_diff(&sobel_magnitude(&img).unwrap().values(), &sobel_mag_oracle(&img)));
        lap_err = lap_err.max(max_diff(&laplacian_magnitude(&img).unwrap().values(), &laplacian_oracle(&img)));
    }
    if sobel_err > 1e-12 {
        failures.push(format!("sobel max err {sobel_err:e}"));
    }
    if lap_err > 1e-12 {
        failures.push(format!("laplacian max err {lap_err:e}"));
    }

    // hand cases
    let step = from_fn(4, 4, |_, x| if x >= 2 { 1.0 } else { 0.0 });
    let s = sobel_magnitude(&step).unwrap();
    for y in 0..4 {
        for x in 0..4 {
            let boundary = x == 1 || x == 2;
            if (s.at(y, x) != 0.0) != boundary {
                failures.push(format!("step edge response at ({y},{x}) = {}", s.at(y, x)));
            }
        }
    }
    let ramp = from_fn(8, 8, |_, x| x as f64 / 10.0);
    let s = sobel_magnitude(&ramp).unwrap();
    let l = laplacian_magnitude(&ramp).unwrap();
    for y in 1..7 {
        for x in 1..7 {
            if (s.at(y, x) - 0.8).abs() > 1e-12 || l.at(y, x) > 1e-12 {
                failures.push(format!("ramp interior at ({y},{x}): sobel {} lap {}", s.at(y, x), l.at(y, x)));
            }
        }
    }
    let flat = Image::filled(6, 6, 0.37, Range::Unit);
    if sobel_magnitude(&flat).unwrap().values().iter().any(|v| *v != 0.0)
        || laplacian_magnitude(&flat).unwrap().values().iter().any(|v| *v != 0.0)
    {
        failures.push("constant image has non-zero derivatives".into());
    }
    let impulse = from_fn(5, 5, |y, x| if (y, x) == (2, 2) { 1.0 } else { 0.0 });
    let l = laplacian_magnitude(&impulse).unwrap();
    let expected = |y: usize, x: usize| match (y, x) {
        (2, 2) => 4.0,
        (1, 2) | (3, 2) | (2, 1) | (2, 3) => 1.0,
        _ => 0.0,
    };
    for y in 0..5 {
        for x in 0..5 {
            if l.at(y, x) != expected(y, x) {
                failures.push(format!("impulse laplacian at ({y},{x}) = {}", l.at(y, x)));
            }
        }
    }

    // patchify round trip, bit-exact, on unit and byte images
    for k in 0..20 {
        let patch = [1, 2, 4, 8][k % 4];
        let (rows, cols) = (r.random_range(1..5), r.random_range(1..5));
        let img = noise(rows * patch, cols * patch, &mut r);
        let img = if k % 2 == 0 { img } else { img.to_range(Range::Byte) };
        let t = patchify(&img, patch).unwrap();
        if t.values.dim() != (rows * cols, patch * patch) {
            failures.push(format!("patchify shape {:?}", t.values.dim()));
        }
        // token k, entry (py, px) is pixel (row·p + py, col·p + px)
        let (tr, tc) = (rows - 1, cols - 1);
        let tok = tr * cols + tc;
        if t.values[[tok, patch * patch - 1]] != img.at(tr * patch + patch - 1, tc * patch + patch - 1) {
            failures.push("patch order is not row-major".into());
        }
        if unpatchify(&t).unwrap() != img {
            failures.push(format!("unpatchify∘patchify differs (patch {patch})"));
        }
    }
    let wide = from_fn(16, 32, |_, x| if x < 16 { 0.25 } else { 0.75 });
    let t = patchify(&wide, 16).unwrap();
    if (t.grid.rows, t.grid.cols) != (1, 2) || t.values[[0, 0]] != 0.25 {
        failures.push("16×32 / patch 16 is not a 1×2 grid with the left patch first".into());
    }

    // color: closed form and round trip on 1000 random pixels
    let n = 1000;
    let vals: Vec<f64> = (0..3 * n).map(|_| r.random()).collect();
    let rgb = Image::new(
        Array3::from_shape_vec((1, n, 3), vals.clone()).unwrap(),
        Range::Unit,
        ColorSpace::Rgb,
    )
    .unwrap();
    let ycc = convert_colorspace(&rgb, ColorSpace::YCbCr).unwrap();
    let mut fwd_err: f64 = 0.0;
    for k in 0..n {
        let o = ycbcr_oracle(vals[3 * k], vals[3 * k + 1], vals[3 * k + 2]);
        for c in 0..3 {
            fwd_err = fwd_err.max((ycc.data()[[0, k, c]] - o[c]).abs());
        }
    }
    if fwd_err > 1e-9 {
        failures.push(format!("rgb→ycbcr differs from oracle by {fwd_err:e}"));
    }
    let back = convert_colorspace(&ycc, ColorSpace::Rgb).unwrap();
    let rt = max_diff(back.data().as_slice().unwrap(), rgb.data().as_slice().unwrap());
    if rt > 1.0 / 255.0 {
        failures.push(format!("color round trip error {rt}"));
    }
    let red = Image::new(
        Array3::from_shape_vec((1, 3, 3), vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap(),
        Range::Unit,
        ColorSpace::Rgb,
    )
    .unwrap();
    let c = convert_colorspace(&red, ColorSpace::YCbCr).unwrap();
    let d = c.data();
    let white_ok = (d[[0, 0, 0]] - 1.0).abs() < 1e-12 && (d[[0, 0, 1]] - 0.5).abs() < 1e-12 && (d[[0, 0, 2]] - 0.5).abs() < 1e-12;
    let black_ok = d[[0, 1, 0]].abs() < 1e-12 && (d[[0, 1, 1]] - 0.5).abs() < 1e-12 && (d[[0, 1, 2]] - 0.5).abs() < 1e-12;
    if !(white_ok && black_ok && (d[[0, 2, 0]] - 0.299).abs() < 1e-12) {
        failures.push(format!("closed-form colors wrong: {:?}", d));
    }

    let secs = timer.secs();
    if secs >= 10.0 {
        failures.push(format!("runtime {secs:.1}s"));
    }
    verdict(
        1,
        "operator oracles",
        failures.is_empty(),
        format!(
            "sobel err {sobel_err:.1e}, laplacian err {lap_err:.1e}, color rt {rt:.1e}, {secs:.2}s{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    );
}

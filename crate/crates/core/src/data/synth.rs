use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::batch::mix_seed;
use super::{PairRecord, PairSet, Split, INFRARED_DIR, VISIBLE_DIR};
use crate::error::{Error, Result};
use crate::imaging::{write_png, Image, Range};

pub const GENERATOR_VERSION: &str = "maefuse-synth/1";

/// Smallest side the generator accepts.
const MIN_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthOptions {
    /// Adds a saturated flat patch to the visible image over textured infrared content.
    pub overexposure: bool,
}

#[derive(Clone, Copy)]
struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, cycles: (f64, f64), amp: (f64, f64)) -> Self {
        let c = rng.random_range(cycles.0..cycles.1);
        let theta = rng.random_range(0.0..TAU);
        Self {
            fx: c * theta.cos(),
            fy: c * theta.sin(),
            phase: rng.random_range(0.0..TAU),
            amp: rng.random_range(amp.0..amp.1),
        }
    }

    /// `u`, `v` are normalized coordinates in `[0, 1)`.
    fn at(&self, u: f64, v: f64) -> f64 {
        self.amp * (TAU * (self.fx * u + self.fy * v) + self.phase).sin()
    }
}

#[derive(Clone, Copy)]
struct Rect {
    top: usize,
    left: usize,
    h: usize,
    w: usize,
}

impl Rect {
    fn random(rng: &mut ChaCha8Rng, size: usize, frac: (f64, f64)) -> Self {
        let side = |rng: &mut ChaCha8Rng| {
            ((size as f64 * rng.random_range(frac.0..frac.1)).round() as usize).clamp(2, size)
        };
        let (h, w) = (side(rng), side(rng));
        Self {
            top: rng.random_range(0..=size - h),
            left: rng.random_range(0..=size - w),
            h,
            w,
        }
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.h).contains(&y) && (self.left..self.left + self.w).contains(&x)
    }

    fn centre(&self) -> (f64, f64) {
        (
            self.top as f64 + self.h as f64 / 2.0,
            self.left as f64 + self.w as f64 / 2.0,
        )
    }
}

fn quantize(v: f64) -> f64 {
    // same arithmetic as the 8-bit PNG reader, so in-memory pairs equal their files
    (v.clamp(0.0, 1.0) * 255.0).round() * (1.0 / 255.0)
}

fn attempt(size: usize, rng: &mut ChaCha8Rng, opts: SynthOptions) -> (Vec<f64>, Vec<f64>) {
    let s = size as f64;
    let tilt = (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
    let coarse: Vec<Wave> = (0..3)
        .map(|_| Wave::random(rng, (0.5, 3.0), (0.05, 0.1)))
        .collect();
    let fine: Vec<Wave> = (0..2)
        .map(|_| Wave::random(rng, (s / 12.0, s / 7.0), (0.015, 0.03)))
        .collect();
    let occluders: Vec<Rect> = (0..rng.random_range(1..=2))
        .map(|_| Rect::random(rng, size, (0.2, 0.35)))
        .collect();
    let dark = rng.random_range(0.04..0.12);

    let ir_bg = Wave::random(rng, (0.3, 1.5), (0.03, 0.06));
    let mut blobs = vec![{
        // the first hot object always sits inside a dark visible region
        let (cy, cx) = occluders[0].centre();
        (cy, cx, s * rng.random_range(0.06..0.1), rng.random_range(0.6..0.7))
    }];
    for _ in 0..rng.random_range(1..=2) {
        blobs.push((
            rng.random_range(0.0..s),
            rng.random_range(0.0..s),
            s * rng.random_range(0.05..0.1),
            rng.random_range(0.4..0.65),
        ));
    }
    let glare = opts.overexposure.then(|| {
        let r = Rect::random(rng, size, (0.25, 0.35));
        let stripes = Wave::random(rng, (s / 10.0, s / 6.0), (0.12, 0.18));
        (r, stripes, rng.random_range(0.97..1.0))
    });

    let mut v = Vec::with_capacity(size * size);
    let mut i = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (u, w) = (x as f64 / s, y as f64 / s);
            let mut vis = 0.55 + tilt.0 * (u - 0.5) + tilt.1 * (w - 0.5);
            vis += coarse.iter().chain(&fine).map(|c| c.at(u, w)).sum::<f64>();
            if occluders.iter().any(|r| r.contains(y, x)) {
                vis = dark + 0.1 * fine[0].at(u, w);
            }
            let mut ir = 0.25 + ir_bg.at(u, w);
            for &(cy, cx, sigma, amp) in &blobs {
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                ir += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            if let Some((r, stripes, level)) = &glare {
                if r.contains(y, x) {
                    vis = *level;
                    ir = ir.min(0.6) + 0.2 + stripes.at(u, w);
                }
            }
            v.push(quantize(vis));
            i.push(quantize(ir));
        }
    }
    (v, i)
}

fn complementary(v: &[f64], i: &[f64]) -> bool {
    let hot = v.iter().zip(i).any(|(a, b)| *b > a + 0.3);
    let lit = v.iter().zip(i).any(|(a, b)| *a > b + 0.3);
    hot && lit
}

/// One deterministic `(visible, infrared)` pair of gray, 8-bit-quantized unit-range
/// images. Every pair has pixels where the infrared exceeds the visible by more than 0.3
/// and pixels where the reverse holds.
pub fn synth_pair(size: usize, seed: u64, opts: SynthOptions) -> Result<(Image, Image)> {
    if size < MIN_SIZE {
        return Err(Error::Config(format!("synthetic size {size} below {MIN_SIZE}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..64 {
        let (v, i) = attempt(size, &mut rng, opts);
        if complementary(&v, &i) {
            return Ok((
                Image::gray(size, size, v, Range::Unit)?,
                Image::gray(size, size, i, Range::Unit)?,
            ));
        }
    }
    Err(Error::Numerical(format!(
        "no complementary pair found for seed {seed} at size {size}"
    )))
}

/// Writes `n` pairs as `out/vi/NNNN.png` and `out/ir/NNNN.png` plus `out/manifest.json`.
pub fn synth_pairs(
    n: usize,
    size: usize,
    seed: u64,
    out: impl AsRef<Path>,
    opts: SynthOptions,
) -> Result<PairSet> {
    let out = out.as_ref();
    if size < MIN_SIZE {
        return Err(Error::Config(format!("synthetic size {size} below {MIN_SIZE}")));
    }
    let (dv, di) = (out.join(VISIBLE_DIR), out.join(INFRARED_DIR));
    for d in [&dv, &di] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut records = Vec::with_capacity(n);
    for k in 0..n {
        let (v, i) = synth_pair(size, mix_seed(seed, 0x5157, k as u64), opts)?;
        let stem = format!("{k:04}");
        let path_v = dv.join(format!("{stem}.png"));
        let path_i = di.join(format!("{stem}.png"));
        write_png(&path_v, &v)?;
        write_png(&path_i, &i)?;
        records.push(PairRecord {
            stem,
            path_v,
            path_i,
            split: Split::Train,
        });
    }
    let manifest = json!({
        "generator": GENERATOR_VERSION,
        "n": n,
        "size": size,
        "seed": seed,
        "options": opts,
    });
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| Error::io(&path, e))?;
    Ok(PairSet {
        records,
        seed,
        warnings: Vec::new(),
    })
}

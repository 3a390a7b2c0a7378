use std::f64::consts::FRAC_PI_2;

use maefuse::imaging::Image;
use maefuse::metrics::{cc, nabf, nlpd_with_levels, psnr, scd};
use rand::Rng;

use crate::operators::sobel_oracle;
use crate::support::{exclusive, noise, rng, verdict, Timer};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

fn cc_oracle(f: &[f64], v: &[f64], i: &[f64]) -> f64 {
    0.5 * (pearson(f, v) + pearson(f, i))
}

fn scd_oracle(f: &[f64], v: &[f64], i: &[f64]) -> f64 {
    let fv: Vec<f64> = f.iter().zip(v).map(|(a, b)| a - b).collect();
    let fi: Vec<f64> = f.iter().zip(i).map(|(a, b)| a - b).collect();
    pearson(&fv, i) + pearson(&fi, v)
}

fn psnr_oracle(f: &[f64], v: &[f64], i: &[f64]) -> f64 {
    let mse = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (255.0 * x - 255.0 * y).powi(2)).sum::<f64>() / a.len() as f64
    };
    let m = 0.5 * (mse(f, v) + mse(f, i));
    if m < 255.0 * 255.0 * 1e-10 {
        100.0
    } else {
        10.0 * (255.0 * 255.0 / m).log10()
    }
}

/// Xydeas–Petrovic preservation of one source edge in the fused edge.
fn q_oracle(gs: f64, as_: f64, gf: f64, af: f64) -> f64 {
    let g = if gs == 0.0 && gf == 0.0 {
        1.0
    } else if gs > gf {
        gf / gs
    } else {
        gs / gf
    };
    let a = 1.0 - (as_ - af).abs() / FRAC_PI_2;
    let qg = 0.9994 / (1.0 + (-15.0 * (g - 0.5)).exp());
    let qa = 0.9879 / (1.0 + (-22.0 * (a - 0.8)).exp());
    qg * qa
}

fn edge_oracle(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let (gx, gy) = sobel_oracle(img);
    let g = gx.iter().zip(&gy).map(|(x, y)| (x * x + y * y).sqrt()).collect();
    let a = gx
        .iter()
        .zip(&gy)
        .map(|(x, y)| match (*x == 0.0, *y == 0.0) {
            (true, true) => 0.0,
            (true, false) => FRAC_PI_2,
            _ => (y / x).atan(),
        })
        .collect();
    (g, a)
}

fn nabf_oracle(f: &Image, v: &Image, i: &Image) -> f64 {
    let (gf, af) = edge_oracle(f);
    let (gv, av) = edge_oracle(v);
    let (gi, ai) = edge_oracle(i);
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..gf.len() {
        let w = gv[k].powf(1.5) + gi[k].powf(1.5);
        den += w;
        let artifact = gf[k] > gv[k] && gf[k] > gi[k];
        if artifact {
            num += (1.0 - q_oracle(gv[k], av[k], gf[k], af[k]))
                * (1.0 - q_oracle(gi[k], ai[k], gf[k], af[k]))
                * w;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

type Grid = Vec<Vec<f64>>;

/// 5×5 binomial blur as a full 2-D kernel with replicate borders.
fn blur(x: &Grid) -> Grid {
    let k = [1.0, 4.0, 6.0, 4.0, 1.0];
    let (h, w) = (x.len() as isize, x[0].len() as isize);
    let mut out = vec![vec![0.0; w as usize]; h as usize];
    for y in 0..h {
        for xx in 0..w {
            let mut s = 0.0;
            for dy in -2..=2isize {
                for dx in -2..=2isize {
                    let yy = (y + dy).clamp(0, h - 1) as usize;
                    let xc = (xx + dx).clamp(0, w - 1) as usize;
                    s += k[(dy + 2) as usize] * k[(dx + 2) as usize] / 256.0 * x[yy][xc];
                }
            }
            out[y as usize][xx as usize] = s;
        }
    }
    out
}

fn down(x: &Grid) -> Grid {
    let b = blur(x);
    b.iter().step_by(2).map(|row| row.iter().step_by(2).copied().collect()).collect()
}

fn up(x: &Grid, h: usize, w: usize) -> Grid {
    let mut z = vec![vec![0.0; w]; h];
    for (y, row) in x.iter().enumerate() {
        for (xx, v) in row.iter().enumerate() {
            if 2 * y < h && 2 * xx < w {
                z[2 * y][2 * xx] = 4.0 * v;
            }
        }
    }
    blur(&z)
}

fn bands(img: &Image, levels: usize) -> Vec<Grid> {
    let (h, w) = img.dims();
    let mut g: Vec<Grid> = vec![(0..h).map(|y| (0..w).map(|x| img.at(y, x)).collect()).collect()];
    for _ in 1..levels {
        let next = down(g.last().unwrap());
        g.push(next);
    }
    (0..levels)
        .map(|k| {
            let band: Grid = if k + 1 < levels {
                let e = up(&g[k + 1], g[k].len(), g[k][0].len());
                g[k].iter().zip(&e).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect()).collect()
            } else {
                g[k].clone()
            };
            let abs: Grid = band.iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect();
            let act = blur(&abs);
            band.iter()
                .zip(&act)
                .map(|(b, a)| b.iter().zip(a).map(|(p, q)| p / (q + 0.17)).collect())
                .collect()
        })
        .collect()
}

fn nlpd_pair(a: &[Grid], b: &[Grid]) -> f64 {
    let per: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let mut s = 0.0;
            let mut n = 0.0;
            for (rx, ry) in x.iter().zip(y) {
                for (p, q) in rx.iter().zip(ry) {
                    s += (p - q) * (p - q);
                    n += 1.0;
                }
            }
            (s / n).sqrt()
        })
        .sum();
    per / a.len() as f64
}

fn nlpd_oracle(f: &Image, v: &Image, i: &Image, levels: usize) -> f64 {
    let (bf, bv, bi) = (bands(f, levels), bands(v, levels), bands(i, levels));
    0.5 * (nlpd_pair(&bf, &bv) + nlpd_pair(&bf, &bi))
}

#[test]
fn criterion_04_metric_oracles() {
    let _serial = exclusive();
    let timer = Timer::start();
    let mut r = rng(404);
    let names = ["cc", "scd", "psnr", "nabf", "nlpd"];
    let tol = [1e-10, 1e-10, 1e-9, 1e-8, 1e-8];
    let mut worst = [0.0f64; 5];
    for t in 0..50 {
        let (h, w) = (r.random_range(8..=32), r.random_range(8..=32));
        let v = noise(h, w, &mut r);
        let i = noise(h, w, &mut r);
        // mix of unrelated, related and degenerate fused images
        let f = match t % 5 {
            0 => v.clone(),
            1 => {
                let n = noise(h, w, &mut r);
                Image::gray(h, w, v.values().iter().zip(n.values()).map(|(a, b)| 0.7 * a + 0.3 * b).collect(), maefuse::imaging::Range::Unit).unwrap()
            }
            _ => noise(h, w, &mut r),
        };
        let (fv, vv, iv) = (f.values(), v.values(), i.values());
        let levels = 4.min(h.min(w).ilog2() as usize);
        let got = [
            cc(&f, &v, &i).unwrap(),
            scd(&f, &v, &i).unwrap(),
            psnr(&f, &v, &i).unwrap(),
            nabf(&f, &v, &i).unwrap(),
            nlpd_with_levels(&f, &v, &i, levels).unwrap(),
        ];
        let want = [
            cc_oracle(&fv, &vv, &iv),
            scd_oracle(&fv, &vv, &iv),
            psnr_oracle(&fv, &vv, &iv),
            nabf_oracle(&f, &v, &i),
            nlpd_oracle(&f, &v, &i, levels),
        ];
        for k in 0..5 {
            worst[k] = worst[k].max((got[k] - want[k]).abs());
        }
    }
    let secs = timer.secs();
    let over: Vec<String> = (0..5)
        .filter(|&k| !(worst[k] <= tol[k]))
        .map(|k| format!("{} {:.1e} > {:.0e}", names[k], worst[k], tol[k]))
        .collect();
    let detail: Vec<String> = (0..5).map(|k| format!("{} {:.1e}", names[k], worst[k])).collect();
    verdict(
        4,
        "metric oracle equivalence",
        over.is_empty() && secs < 60.0,
        format!(
            "50 triples, max abs err: {}; {secs:.1}s{}",
            detail.join(", "),
            if over.is_empty() { String::new() } else { format!("; {}", over.join(", ")) }
        ),
    );
}

use candle_core::{Device, Tensor};
use maefuse::imaging::{max_fuse, GridShape, Image};
use maefuse::losses::{loss_align, loss_fusion_total, LossWeights};
use maefuse::model::TokenSequence;
use rand::Rng;

use crate::operators::{laplacian_oracle, sobel_mag_oracle};
use crate::support::{exclusive, noise, rng, verdict, Timer};

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn elementwise_max(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x.max(*y)).collect()
}

/// The fusion loss rebuilt from the operator oracles.
fn fusion_oracle(f: &Image, v: &Image, i: &Image, alpha: f64, beta: f64) -> f64 {
    let int = mean_abs_diff(&f.values(), &elementwise_max(&v.values(), &i.values()));
    let grad = mean_abs_diff(
        &sobel_mag_oracle(f),
        &elementwise_max(&sobel_mag_oracle(v), &sobel_mag_oracle(i)),
    );
    let lap = mean_abs_diff(
        &laplacian_oracle(f),
        &elementwise_max(&laplacian_oracle(v), &laplacian_oracle(i)),
    );
    int + alpha * grad + beta * lap
}

fn tokens(vals: Vec<f64>, n: usize, d: usize) -> TokenSequence {
    let grid = GridShape { rows: 1, cols: n, patch: 1 };
    TokenSequence::new(Tensor::from_vec(vals, (1, n, d), &Device::Cpu).unwrap(), grid, false).unwrap()
}

#[test]
fn criterion_02_loss_identities() {
    let _serial = exclusive();
    let timer = Timer::start();
    let mut r = rng(202);
    let w = LossWeights::default();
    let mut worst: f64 = 0.0;
    let mut oracle_err: f64 = 0.0;
    let mut failures = Vec::new();
    for trial in 0..50 {
        let v = noise(8, 8, &mut r);
        let i = noise(8, 8, &mut r);
        let f = noise(8, 8, &mut r);

        let m = max_fuse(&v, &i).unwrap();
        let (_, c) = loss_fusion_total(&m, &v, &i, w).unwrap();
        worst = worst.max(c.intensity.abs());

        let (zero, _) = loss_fusion_total(&v, &v, &v, w).unwrap();
        worst = worst.max(zero.abs());

        let (a, _) = loss_fusion_total(&f, &v, &i, w).unwrap();
        let (b, _) = loss_fusion_total(&f, &i, &v, w).unwrap();
        worst = worst.max((a - b).abs());

        oracle_err = oracle_err.max((a - fusion_oracle(&f, &v, &i, 1.0, 2.0)).abs());

        let (n, d) = (r.random_range(1..6), 4 * r.random_range(1..4));
        let pi: Vec<f64> = (0..n * d).map(|_| r.random_range(-2.0..2.0)).collect();
        let pv: Vec<f64> = (0..n * d).map(|_| r.random_range(-2.0..2.0)).collect();
        let mean: Vec<f64> = pi.iter().zip(&pv).map(|(a, b)| (a + b) / 2.0).collect();
        let al = loss_align(&tokens(mean, n, d), &tokens(pi, n, d), &tokens(pv, n, d)).unwrap();
        worst = worst.max(al.abs());
        if trial == 0 {
            let ones = loss_align(
                &tokens(vec![1.0; n * d], n, d),
                &tokens(vec![0.0; n * d], n, d),
                &tokens(vec![0.0; n * d], n, d),
            )
            .unwrap();
            if ones != 1.0 {
                failures.push(format!("align(ones, 0, 0) = {ones}"));
            }
        }
    }
    if worst > 1e-12 {
        failures.push(format!("identity residual {worst:e}"));
    }
    if oracle_err > 1e-12 {
        failures.push(format!("fusion loss vs oracle {oracle_err:e}"));
    }
    let secs = timer.secs();
    if secs >= 5.0 {
        failures.push(format!("runtime {secs:.1}s"));
    }
    verdict(
        2,
        "loss identities",
        failures.is_empty(),
        format!(
            "max identity residual {worst:.1e}, oracle err {oracle_err:.1e}, {secs:.2}s{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    );
}

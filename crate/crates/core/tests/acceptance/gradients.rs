use candle_core::{DType, Device, Tensor, Var};
use maefuse::imaging::GridShape;
use maefuse::losses::{
    laplacian_magnitude_t, loss_align_t, loss_decoder_t, loss_fusion_t, sobel_magnitude_t,
    LossWeights,
};
use maefuse::model::{
    cfm_forward, decode_raw, encode_tensor, ffn_forward, fuse_tokens, mfm_forward, FusionPath,
    Group, ModelConfig, ModelParams, Precision, TokenSequence,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::support::{exclusive, rng, verdict, Timer};

const TRIALS: u64 = 20;
const STEP: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn tiny() -> ModelConfig {
    ModelConfig {
        patch: 2,
        embed_dim: 8,
        encoder_depth: 2,
        decoder_depth: 1,
        heads: 2,
        mlp_ratio: 2.0,
        use_cls: false,
        mask_ratio: 0.75,
        precision: Precision::F64,
    }
}

/// Model with every group (including the zero-initialized projections) randomized.
fn random_params(seed: u64) -> ModelParams {
    let p = ModelParams::init(&tiny(), seed).unwrap();
    for (k, g) in Group::ALL.into_iter().enumerate() {
        p.randomize_group(g, seed * 17 + k as u64, 0.3).unwrap();
    }
    p
}

fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar().unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Relative error between the autodiff gradient of `f` at `x0` and central differences
/// over every input element.
fn check_input(f: &dyn Fn(&Tensor) -> Tensor, x0: &Tensor) -> f64 {
    let xv = Var::from_tensor(x0).unwrap();
    let grads = f(xv.as_tensor()).backward().unwrap();
    let analytic = grads
        .get(xv.as_tensor())
        .map(flat)
        .unwrap_or_else(|| vec![0.0; x0.elem_count()]);
    let base = flat(x0);
    let numeric: Vec<f64> = (0..base.len())
        .map(|k| {
            let mut p = base.clone();
            p[k] += STEP;
            let mut m = base.clone();
            m[k] -= STEP;
            let at = |v: Vec<f64>| scalar(&f(&Tensor::from_vec(v, x0.dims(), &Device::Cpu).unwrap()));
            (at(p) - at(m)) / (2.0 * STEP)
        })
        .collect();
    rel_err(&analytic, &numeric)
}

/// Random projection of an output onto a scalar.
fn project(out: &Tensor, weights: &Tensor) -> Tensor {
    (out * weights).unwrap().sum_all().unwrap()
}

fn seq(t: Tensor) -> TokenSequence {
    let n = t.dims()[1];
    TokenSequence::new(t, GridShape { rows: 2, cols: n / 2, patch: 2 }, false).unwrap()
}

/// Gradient of a full fusion pass w.r.t. a few sampled entries of every parameter group.
fn check_parameters(p: &ModelParams, v: &Tensor, i: &Tensor, r: &mut ChaCha8Rng) -> Vec<(Group, f64)> {
    let loss = || -> Tensor {
        let phi_v = encode_tensor(v, p).unwrap();
        let phi_i = encode_tensor(i, p).unwrap();
        let fused = fuse_tokens(&phi_i, &phi_v, p, FusionPath::Full).unwrap().fused;
        let f = decode_raw(&fused, p).unwrap();
        loss_fusion_t(&f, v, i, LossWeights::default()).unwrap().total
    };
    let grads = loss().backward().unwrap();
    let mut out = Vec::new();
    for g in [Group::Encoder, Group::Cfm, Group::Mfm, Group::Ffn, Group::Decoder] {
        let vars: Vec<Var> = p
            .group_vars(g)
            .into_iter()
            .filter(|(name, _)| !name.ends_with("mask_token") && !name.ends_with("cls"))
            .map(|(_, v)| v.clone())
            .collect();
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for _ in 0..4 {
            let var = &vars[r.random_range(0..vars.len())];
            let base = flat(var.as_tensor());
            let k = r.random_range(0..base.len());
            let a = grads.get(var.as_tensor()).map(flat).map(|g| g[k]).unwrap_or(0.0);
            let eval = |delta: f64| {
                let mut x = base.clone();
                x[k] += delta;
                var.set(&Tensor::from_vec(x, var.dims(), &Device::Cpu).unwrap()).unwrap();
                scalar(&loss())
            };
            let d = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            var.set(&Tensor::from_vec(base, var.dims(), &Device::Cpu).unwrap()).unwrap();
            analytic.push(a);
            numeric.push(d);
        }
        out.push((g, rel_err(&analytic, &numeric)));
    }
    out
}

#[test]
fn criterion_03_gradient_checks() {
    let _serial = exclusive();
    let timer = Timer::start();
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, e: f64| match worst.iter_mut().find(|(n, _)| n == name) {
        Some((_, w)) => *w = w.max(e),
        None => worst.push((name.to_string(), e)),
    };
    for trial in 0..TRIALS {
        let mut r = rng(3000 + trial);
        let p = random_params(trial + 1);
        let tok = [1, 4, 8];
        let w = uniform(&tok, -1.0, 1.0, &mut r);
        let x = uniform(&tok, -1.0, 1.0, &mut r);
        let y = uniform(&tok, -1.0, 1.0, &mut r);
        let z = uniform(&tok, -1.0, 1.0, &mut r);
        let block = &p.encoder.blocks[0];

        record("attention", check_input(&|t| project(&block.attn.forward(t, t).unwrap(), &w), &x));
        record("cross-attention (query)", check_input(&|t| project(&p.cfm.cross.forward(t, &y).unwrap(), &w), &x));
        record("cross-attention (context)", check_input(&|t| project(&p.cfm.cross.forward(&y, t).unwrap(), &w), &x));
        record("layer norm", check_input(&|t| project(&block.norm1.forward(t).unwrap(), &w), &x));
        record("mlp", check_input(&|t| project(&block.mlp.forward(t).unwrap(), &w), &x));
        record("transformer block", check_input(&|t| project(&block.forward(t).unwrap(), &w), &x));
        record("cfm", check_input(&|t| project(&cfm_forward(&seq(t.clone()), &seq(y.clone()), &p).unwrap().tokens, &w), &x));
        record("mfm (Φ_D)", check_input(&|t| project(&mfm_forward(&seq(y.clone()), &seq(z.clone()), &seq(t.clone()), &p).unwrap().tokens, &w), &x));
        record("mfm (Φ_V)", check_input(&|t| project(&mfm_forward(&seq(y.clone()), &seq(t.clone()), &seq(z.clone()), &p).unwrap().tokens, &w), &x));
        record("ffn", check_input(&|t| project(&ffn_forward(&seq(t.clone()), &p).unwrap().tokens, &w), &x));
        let img = [1, 4, 4];
        let wi = uniform(&img, -1.0, 1.0, &mut r);
        record("decoder", check_input(&|t| project(&decode_raw(&seq(t.clone()), &p).unwrap(), &wi), &x));
        let pix = uniform(&img, 0.05, 0.95, &mut r);
        record("encoder", check_input(&|t| project(&encode_tensor(t, &p).unwrap().tokens, &w), &pix));

        let big = [1, 6, 6];
        let wb = uniform(&big, -1.0, 1.0, &mut r);
        let (f, v, i) = (
            uniform(&big, 0.0, 1.0, &mut r),
            uniform(&big, 0.0, 1.0, &mut r),
            uniform(&big, 0.0, 1.0, &mut r),
        );
        record("sobel magnitude", check_input(&|t| project(&sobel_magnitude_t(t).unwrap(), &wb), &f));
        record("laplacian magnitude", check_input(&|t| project(&laplacian_magnitude_t(t).unwrap(), &wb), &f));
        record("decoder loss", check_input(&|t| loss_decoder_t(t, &v).unwrap(), &f));
        record("fusion loss", check_input(&|t| loss_fusion_t(t, &v, &i, LossWeights::default()).unwrap().total, &f));
        record("align loss", check_input(&|t| loss_align_t(t, &y, &z).unwrap(), &x));

        for (g, e) in check_parameters(&p, &pix, &uniform(&img, 0.05, 0.95, &mut r), &mut r) {
            record(&format!("params:{}", g.as_str()), e);
        }
    }
    let secs = timer.secs();
    let (name, max) = worst
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |acc, (n, e)| if e > acc.1 { (n, e) } else { acc });
    let failing: Vec<String> = worst
        .iter()
        .filter(|(_, e)| !(*e <= TOL))
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect();
    let pass = failing.is_empty() && secs < 60.0;
    verdict(
        3,
        "gradient checks",
        pass,
        format!(
            "{} checks x {TRIALS} trials, worst rel err {max:.1e} ({name}), {secs:.1}s{}",
            worst.len(),
            if failing.is_empty() { String::new() } else { format!("; over tolerance: {}", failing.join(", ")) }
        ),
    );
}

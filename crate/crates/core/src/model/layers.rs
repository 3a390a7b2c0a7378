//! Differentiable building blocks on `[batch, tokens, dim]` tensors.

use candle_core::{DType, Device, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

const LN_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

/// Seeded parameter allocator.
pub(crate) struct ParamFactory {
    rng: ChaCha8Rng,
    dtype: DType,
}

impl ParamFactory {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
        }
    }

    /// Normal(0, std) truncated at two standard deviations.
    pub fn trunc_normal(&mut self, shape: &[usize], std: f64) -> Result<Var> {
        let normal = Normal::new(0.0, std).expect("positive std");
        let n: usize = shape.iter().product();
        let mut vals = Vec::with_capacity(n);
        while vals.len() < n {
            let v: f64 = normal.sample(&mut self.rng);
            if v.abs() <= 2.0 * std {
                vals.push(v);
            }
        }
        let t = Tensor::from_vec(vals, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Result<Var> {
        Ok(Var::zeros(shape, self.dtype, &Device::Cpu)?)
    }

    pub fn ones(&mut self, shape: &[usize]) -> Result<Var> {
        Ok(Var::ones(shape, self.dtype, &Device::Cpu)?)
    }
}

/// Walks named parameters.
pub(crate) trait Visit {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>);
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `y = x·W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub(crate) fn new(f: &mut ParamFactory, inp: usize, out: usize) -> Result<Self> {
        Ok(Self {
            weight: f.trunc_normal(&[inp, out], INIT_STD)?,
            bias: f.zeros(&[out])?,
        })
    }

    pub(crate) fn zero_init(f: &mut ParamFactory, inp: usize, out: usize) -> Result<Self> {
        Ok(Self {
            weight: f.zeros(&[inp, out])?,
            bias: f.zeros(&[out])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(self.weight.as_tensor())?
            .broadcast_add(self.bias.as_tensor())?)
    }
}

impl Visit for Linear {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub scale: Var,
    pub shift: Var,
}

impl LayerNorm {
    pub(crate) fn new(f: &mut ParamFactory, dim: usize) -> Result<Self> {
        Ok(Self {
            scale: f.ones(&[dim])?,
            shift: f.zeros(&[dim])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(self.scale.as_tensor())?
            .broadcast_add(self.shift.as_tensor())?)
    }
}

impl Visit for LayerNorm {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        out.push((join(prefix, "scale"), &self.scale));
        out.push((join(prefix, "shift"), &self.shift));
    }
}

pub(crate) fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Multi-head scaled dot-product attention with separate query and key/value sources.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    pub(crate) fn new(
        f: &mut ParamFactory,
        dim: usize,
        heads: usize,
        zero_out: bool,
    ) -> Result<Self> {
        let q = Linear::new(f, dim, dim)?;
        let k = Linear::new(f, dim, dim)?;
        let v = Linear::new(f, dim, dim)?;
        let out = if zero_out {
            Linear::zero_init(f, dim, dim)?
        } else {
            Linear::new(f, dim, dim)?
        };
        Ok(Self { q, k, v, out, heads })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        Ok(x.reshape((b, n, self.heads, d / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// Attention probabilities, `[batch, heads, n_query, n_kv]`.
    pub fn probabilities(&self, q_src: &Tensor, kv_src: &Tensor) -> Result<Tensor> {
        let q = self.split_heads(&self.q.forward(q_src)?)?;
        let k = self.split_heads(&self.k.forward(kv_src)?)?;
        self.scores(&q, &k)
    }

    fn scores(&self, q: &Tensor, k: &Tensor) -> Result<Tensor> {
        let head_dim = q.dim(D::Minus1)?;
        let logits = (q.matmul(&k.t()?)? / (head_dim as f64).sqrt())?;
        softmax_last(&logits)
    }

    pub fn forward(&self, q_src: &Tensor, kv_src: &Tensor) -> Result<Tensor> {
        let (b, n, d) = q_src.dims3()?;
        let q = self.split_heads(&self.q.forward(q_src)?)?;
        let k = self.split_heads(&self.k.forward(kv_src)?)?;
        let v = self.split_heads(&self.v.forward(kv_src)?)?;
        let ctx = self.scores(&q, &k)?.matmul(&v)?;
        let merged = ctx.transpose(1, 2)?.contiguous()?.reshape((b, n, d))?;
        self.out.forward(&merged)
    }
}

impl Visit for Attention {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        self.q.visit(&join(prefix, "q"), out);
        self.k.visit(&join(prefix, "k"), out);
        self.v.visit(&join(prefix, "v"), out);
        self.out.visit(&join(prefix, "out"), out);
    }
}

/// Two fully connected layers with a GELU between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub(crate) fn new(f: &mut ParamFactory, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(f, dim, hidden)?,
            fc2: Linear::new(f, hidden, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu_erf()?)
    }
}

impl Visit for Mlp {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        self.fc1.visit(&join(prefix, "fc1"), out);
        self.fc2.visit(&join(prefix, "fc2"), out);
    }
}

/// Pre-norm transformer block:
/// `t ← MHA(LN(t)) + t`, then `t ← MLP(LN(t)) + t`.
#[derive(Debug, Clone)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub(crate) fn new(f: &mut ParamFactory, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(f, dim)?,
            attn: Attention::new(f, dim, heads, false)?,
            norm2: LayerNorm::new(f, dim)?,
            mlp: Mlp::new(f, dim, hidden)?,
        })
    }

    pub fn forward(&self, t: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(t)?;
        let t = (self.attn.forward(&h, &h)? + t)?;
        let h = self.norm2.forward(&t)?;
        Ok((self.mlp.forward(&h)? + t)?)
    }
}

impl Visit for Block {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        self.norm1.visit(&join(prefix, "norm1"), out);
        self.attn.visit(&join(prefix, "attn"), out);
        self.norm2.visit(&join(prefix, "norm2"), out);
        self.mlp.visit(&join(prefix, "mlp"), out);
    }
}

/// Cross-attention sub-layer: `MHA(LN_q(query), LN_kv(context))`, residual left to the caller.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub norm_q: LayerNorm,
    pub norm_kv: LayerNorm,
    pub attn: Attention,
}

impl CrossAttention {
    pub(crate) fn new(f: &mut ParamFactory, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            norm_q: LayerNorm::new(f, dim)?,
            norm_kv: LayerNorm::new(f, dim)?,
            attn: Attention::new(f, dim, heads, true)?,
        })
    }

    pub fn forward(&self, query: &Tensor, context: &Tensor) -> Result<Tensor> {
        let q = self.norm_q.forward(query)?;
        let kv = self.norm_kv.forward(context)?;
        self.attn.forward(&q, &kv)
    }
}

impl Visit for CrossAttention {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Var)>) {
        self.norm_q.visit(&join(prefix, "norm_q"), out);
        self.norm_kv.visit(&join(prefix, "norm_kv"), out);
        self.attn.visit(&join(prefix, "attn"), out);
    }
}

/// Fixed 2D sine-cosine positional table, `[rows·cols, dim]`.
pub fn sincos_positions(rows: usize, cols: usize, dim: usize, dtype: DType) -> Result<Tensor> {
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter)
        .map(|i| 1.0 / 10000f64.powf(i as f64 / quarter as f64))
        .collect();
    let mut table = Vec::with_capacity(rows * cols * dim);
    for r in 0..rows {
        for c in 0..cols {
            // first half encodes the column, second half the row
            for pos in [c as f64, r as f64] {
                table.extend(omega.iter().map(|w| (pos * w).sin()));
                table.extend(omega.iter().map(|w| (pos * w).cos()));
            }
        }
    }
    Ok(Tensor::from_vec(table, (rows * cols, dim), &Device::Cpu)?.to_dtype(dtype)?)
}

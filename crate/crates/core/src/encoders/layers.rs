//! Transformer building blocks shared by the vision encoder, the text
//! encoder and the causal decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::posenc::{apply_rotary, RotationPlan, TokenPositions};
use crate::tensor::{ParamSet, Scope, Tensor};

pub const LN_EPS: f64 = 1e-5;
/// Additive attention mask value; `exp` of it underflows to exactly 0.
pub const MASKED: f64 = -1e9;
pub const EMBED_STD: f64 = 0.02;

/// Deterministic parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::new(shape, data).expect("nonzero shape")
    }

    pub fn linear(&mut self, p: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        let w = self.normal(&[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt());
        p.insert(format!("{name}.weight"), w, true)?;
        p.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]), true)
    }

    pub fn linear_std(&mut self, p: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, std: f64) -> Result<()> {
        p.insert(format!("{name}.weight"), self.normal(&[fan_in, fan_out], std), true)?;
        p.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]), true)
    }

    pub fn layer_norm(&mut self, p: &mut ParamSet, name: &str, d: usize) -> Result<()> {
        p.insert(format!("{name}.gain"), Tensor::full(&[d], 1.0), true)?;
        p.insert(format!("{name}.bias"), Tensor::zeros(&[d]), true)
    }

    pub fn attention(&mut self, p: &mut ParamSet, name: &str, d: usize) -> Result<()> {
        for proj in ["q", "k", "v", "o"] {
            self.linear(p, &format!("{name}.{proj}"), d, d)?;
        }
        Ok(())
    }

    /// Pre-norm block: `ln1`, `attn`, `ln2`, `mlp.fc1`, `mlp.fc2` (4x width).
    pub fn block(&mut self, p: &mut ParamSet, name: &str, d: usize) -> Result<()> {
        self.layer_norm(p, &format!("{name}.ln1"), d)?;
        self.attention(p, &format!("{name}.attn"), d)?;
        self.layer_norm(p, &format!("{name}.ln2"), d)?;
        self.linear(p, &format!("{name}.mlp.fc1"), d, 4 * d)?;
        self.linear(p, &format!("{name}.mlp.fc2"), 4 * d, d)
    }
}

pub fn linear(x: &Tensor, p: &Scope<'_>, name: &str) -> Result<Tensor> {
    x.matmul(p.get(&format!("{name}.weight"))?)?
        .add(p.get(&format!("{name}.bias"))?)
}

pub fn layer_norm(x: &Tensor, p: &Scope<'_>, name: &str) -> Result<Tensor> {
    x.layer_norm(p.get(&format!("{name}.gain"))?, p.get(&format!("{name}.bias"))?, LN_EPS)
}

/// Rotary settings for one attention call.
#[derive(Clone, Copy)]
pub struct Rotary<'a> {
    pub plan: &'a RotationPlan,
    pub query: &'a TokenPositions,
    pub key: &'a TokenPositions,
}

fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (l, d) = (x.shape()[0], x.shape()[1]);
    if d % heads != 0 {
        return Err(Error::Config(format!("width {d} not divisible by {heads} heads")));
    }
    x.reshape(&[l, heads, d / heads])?.transpose(0, 1)
}

fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let (h, l, dh) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    x.transpose(0, 1)?.reshape(&[l, h * dh])
}

/// Rotated query and key heads, `[H, L, Dh]` each.
pub fn project_qk(
    q_in: &Tensor,
    kv_in: &Tensor,
    p: &Scope<'_>,
    heads: usize,
    rotary: Option<Rotary<'_>>,
) -> Result<(Tensor, Tensor)> {
    let mut q = split_heads(&linear(q_in, p, "q")?, heads)?;
    let mut k = split_heads(&linear(kv_in, p, "k")?, heads)?;
    if let Some(r) = rotary {
        q = apply_rotary(&q, r.query, r.plan)?;
        k = apply_rotary(&k, r.key, r.plan)?;
    }
    Ok((q, k))
}

/// Scaled dot-product logits `[H, Lq, Lk]` before masking.
pub fn attention_logits(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let dh = q.shape()[2];
    Ok(q.bmm(&k.transpose(1, 2)?)?.scale(1.0 / (dh as f64).sqrt()))
}

/// Multi-head attention of `q_in [Lq, D]` over `kv_in [Lk, D]`.
/// `mask` is an additive `[Lq, Lk]` constant.
pub fn attention(
    q_in: &Tensor,
    kv_in: &Tensor,
    p: &Scope<'_>,
    heads: usize,
    rotary: Option<Rotary<'_>>,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    let (q, k) = project_qk(q_in, kv_in, p, heads, rotary)?;
    let v = split_heads(&linear(kv_in, p, "v")?, heads)?;
    let mut scores = attention_logits(&q, &k)?;
    if let Some(m) = mask {
        scores = scores.add(m)?;
    }
    let att = scores.softmax(2)?;
    linear(&merge_heads(&att.bmm(&v)?)?, p, "o")
}

pub fn mlp(x: &Tensor, p: &Scope<'_>) -> Result<Tensor> {
    linear(&linear(x, p, "fc1")?.gelu(), p, "fc2")
}

/// `x + attn(ln1(x))`, then `+ mlp(ln2(x))`.
pub fn block(
    x: &Tensor,
    p: &Scope<'_>,
    heads: usize,
    positions: Option<(&RotationPlan, &TokenPositions)>,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    let h = layer_norm(x, p, "ln1")?;
    let rotary = positions.map(|(plan, pos)| Rotary {
        plan,
        query: pos,
        key: pos,
    });
    let x = x.add(&attention(&h, &h, &p.sub("attn."), heads, rotary, mask)?)?;
    let h = layer_norm(&x, p, "ln2")?;
    x.add(&mlp(&h, &p.sub("mlp."))?)
}

/// `[L, L]` additive mask hiding keys `j > i`.
pub fn causal_mask(len: usize) -> Tensor {
    let mut d = vec![0.0; len * len];
    for i in 0..len {
        for j in i + 1..len {
            d[i * len + j] = MASKED;
        }
    }
    Tensor::new(&[len, len], d).expect("nonzero")
}

/// `[L, L]` additive mask hiding padded keys.
pub fn key_padding_mask(pad: &[bool]) -> Tensor {
    let len = pad.len();
    let mut d = vec![0.0; len * len];
    for i in 0..len {
        for (j, &is_pad) in pad.iter().enumerate() {
            if is_pad {
                d[i * len + j] = MASKED;
            }
        }
    }
    Tensor::new(&[len, len], d).expect("nonzero")
}

/// `weights[1, L] · x[L, D]` reshaped to `[D]`.
pub fn weighted_rows(x: &Tensor, weights: Vec<f64>) -> Result<Tensor> {
    let d = x.shape()[1];
    let w = Tensor::new(&[1, weights.len()], weights)?;
    w.matmul(x)?.reshape(&[d])
}

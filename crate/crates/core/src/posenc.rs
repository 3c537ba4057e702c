//! Positional encodings: learned absolute tables, 1D rotary, and 2D rotary.
//!
//! Rotary variants rotate consecutive coordinate pairs `(2k, 2k+1)` of
//! query/key vectors. In the 2D variant the first half of each head is
//! rotated by the row index and the second half by the column index, i.e.
//! the rotation is the block-diagonal composition `R(h) ⊕ R(w)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_THETA_BASE: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionKind {
    #[serde(rename = "learned")]
    LearnedAbs,
    Rope1d,
    Rope2d,
}

impl PositionKind {
    pub const ALL: [PositionKind; 3] = [PositionKind::LearnedAbs, PositionKind::Rope1d, PositionKind::Rope2d];

    pub fn as_str(self) -> &'static str {
        match self {
            PositionKind::LearnedAbs => "learned",
            PositionKind::Rope1d => "rope1d",
            PositionKind::Rope2d => "rope2d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(PositionKind::LearnedAbs),
            "rope1d" => Ok(PositionKind::Rope1d),
            "rope2d" => Ok(PositionKind::Rope2d),
            other => Err(Error::Config(format!(
                "unknown position mode {other:?} (expected learned, rope1d or rope2d)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositionMode {
    pub kind: PositionKind,
    pub theta_base: f64,
}

impl PositionMode {
    pub fn new(kind: PositionKind, theta_base: f64) -> Result<Self> {
        if !(theta_base > 1.0) || !theta_base.is_finite() {
            return Err(Error::Config(format!("theta_base must exceed 1, got {theta_base}")));
        }
        Ok(Self { kind, theta_base })
    }

    pub fn is_rotary(&self) -> bool {
        matches!(self.kind, PositionKind::Rope1d | PositionKind::Rope2d)
    }

    pub fn plan(&self, head_dim: usize) -> Result<Option<RotationPlan>> {
        match self.kind {
            PositionKind::LearnedAbs => Ok(None),
            PositionKind::Rope1d => RotationPlan::rope1d(head_dim, self.theta_base).map(Some),
            PositionKind::Rope2d => RotationPlan::rope2d(head_dim, self.theta_base).map(Some),
        }
    }
}

/// Rotation frequencies for one head width.
#[derive(Clone, Debug, PartialEq)]
pub enum RotationPlan {
    /// `head_dim / 2` frequencies over a flat token index.
    OneD { head_dim: usize, freqs: Vec<f64> },
    /// `head_dim / 4` frequencies per axis; rows drive the first half.
    TwoD {
        head_dim: usize,
        freqs_h: Vec<f64>,
        freqs_w: Vec<f64>,
    },
}

/// `base^(-2k / d_sub)` for `k in 0..d_sub/2`.
fn schedule(d_sub: usize, base: f64) -> Vec<f64> {
    (0..d_sub / 2)
        .map(|k| base.powf(-(2.0 * k as f64) / d_sub as f64))
        .collect()
}

fn check_decreasing(freqs: &[f64]) -> Result<()> {
    if freqs.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::Config("rotation frequencies must be positive and finite".into()));
    }
    if freqs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("rotation frequencies must be strictly decreasing".into()));
    }
    Ok(())
}

impl RotationPlan {
    pub fn rope1d(head_dim: usize, theta_base: f64) -> Result<Self> {
        if head_dim == 0 || !head_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("RoPE-1D needs an even head_dim, got {head_dim}")));
        }
        Ok(RotationPlan::OneD {
            head_dim,
            freqs: schedule(head_dim, theta_base),
        })
    }

    /// Both axes share one schedule over `head_dim / 4` pairs.
    pub fn rope2d(head_dim: usize, theta_base: f64) -> Result<Self> {
        if head_dim == 0 || !head_dim.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "2D-RoPE needs head_dim divisible by 4, got {head_dim}"
            )));
        }
        let f = schedule(head_dim / 2, theta_base);
        Ok(RotationPlan::TwoD {
            head_dim,
            freqs_h: f.clone(),
            freqs_w: f,
        })
    }

    pub fn rope1d_with_freqs(freqs: Vec<f64>) -> Result<Self> {
        check_decreasing(&freqs)?;
        Ok(RotationPlan::OneD {
            head_dim: freqs.len() * 2,
            freqs,
        })
    }

    pub fn rope2d_with_freqs(freqs_h: Vec<f64>, freqs_w: Vec<f64>) -> Result<Self> {
        check_decreasing(&freqs_h)?;
        check_decreasing(&freqs_w)?;
        if freqs_h.len() != freqs_w.len() || freqs_h.is_empty() {
            return Err(Error::Config("2D-RoPE axes need equal, non-empty schedules".into()));
        }
        Ok(RotationPlan::TwoD {
            head_dim: freqs_h.len() * 4,
            freqs_h,
            freqs_w,
        })
    }

    pub fn head_dim(&self) -> usize {
        match self {
            RotationPlan::OneD { head_dim, .. } | RotationPlan::TwoD { head_dim, .. } => *head_dim,
        }
    }
}

/// Where each token sits, for rotary encodings.
#[derive(Clone, Debug, PartialEq)]
pub enum TokenPositions {
    Flat(Vec<usize>),
    Grid(Vec<(usize, usize)>),
}

impl TokenPositions {
    pub fn len(&self) -> usize {
        match self {
            TokenPositions::Flat(p) => p.len(),
            TokenPositions::Grid(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major grid coordinates, `(i / wp, i % wp)`.
    pub fn grid(hp: usize, wp: usize) -> Self {
        TokenPositions::Grid((0..hp * wp).map(|i| (i / wp, i % wp)).collect())
    }

    pub fn flat(len: usize) -> Self {
        TokenPositions::Flat((0..len).collect())
    }
}

/// Per-token rotation angles, `[L, head_dim / 2]`.
fn angle_table(positions: &TokenPositions, plan: &RotationPlan) -> Result<Vec<f64>> {
    match (positions, plan) {
        (TokenPositions::Flat(pos), RotationPlan::OneD { freqs, .. }) => Ok(pos
            .iter()
            .flat_map(|&p| freqs.iter().map(move |f| p as f64 * f))
            .collect()),
        (TokenPositions::Grid(pos), RotationPlan::TwoD { freqs_h, freqs_w, .. }) => Ok(pos
            .iter()
            .flat_map(|&(h, w)| {
                freqs_h
                    .iter()
                    .map(move |f| h as f64 * f)
                    .chain(freqs_w.iter().map(move |f| w as f64 * f))
            })
            .collect()),
        _ => Err(Error::Config("token positions do not match the rotation plan".into())),
    }
}

fn rotate_pairs(src: &[f64], cos: &[f64], sin: &[f64], seq: usize, half: usize, inverse: bool) -> Vec<f64> {
    let dh = half * 2;
    let mut out = vec![0.0; src.len()];
    let sign = if inverse { -1.0 } else { 1.0 };
    for (b, chunk) in src.chunks(seq * dh).enumerate() {
        let base = b * seq * dh;
        for i in 0..seq {
            for k in 0..half {
                let (c, s) = (cos[i * half + k], sign * sin[i * half + k]);
                let x0 = chunk[i * dh + 2 * k];
                let x1 = chunk[i * dh + 2 * k + 1];
                out[base + i * dh + 2 * k] = x0 * c - x1 * s;
                out[base + i * dh + 2 * k + 1] = x0 * s + x1 * c;
            }
        }
    }
    out
}

/// Rotates `x[..., L, Dh]` with token `i` at `positions[i]`.
pub fn apply_rotary(x: &Tensor, positions: &TokenPositions, plan: &RotationPlan) -> Result<Tensor> {
    let shape = x.shape().to_vec();
    if shape.len() < 2 {
        return Err(Error::Shape(format!("rotary input needs [..., L, Dh], got {shape:?}")));
    }
    let (seq, dh) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if dh != plan.head_dim() {
        return Err(Error::Config(format!(
            "head dim {dh} does not match rotation plan ({})",
            plan.head_dim()
        )));
    }
    if positions.len() != seq {
        return Err(Error::Shape(format!(
            "{} positions for a sequence of length {seq}",
            positions.len()
        )));
    }
    let angles = angle_table(positions, plan)?;
    let cos: Vec<f64> = angles.iter().map(|a| a.cos()).collect();
    let sin: Vec<f64> = angles.iter().map(|a| a.sin()).collect();
    let half = dh / 2;
    let data = rotate_pairs(x.data(), &cos, &sin, seq, half, false);
    Ok(Tensor::from_op(shape, data, &[x], move |g| {
        vec![Some(rotate_pairs(g, &cos, &sin, seq, half, true))]
    }))
}

/// RoPE-1D: pair `(2k, 2k+1)` of token `i` rotated by `positions[i] * θ_k`.
pub fn apply_rope1d(x: &Tensor, positions: &[usize], plan: &RotationPlan) -> Result<Tensor> {
    if x.shape().last().is_some_and(|d| d % 2 != 0) {
        return Err(Error::Config("RoPE-1D needs an even head dim".into()));
    }
    apply_rotary(x, &TokenPositions::Flat(positions.to_vec()), plan)
}

/// 2D-RoPE over a row-major `hp × wp` patch grid.
pub fn apply_rope2d(x: &Tensor, grid: (usize, usize), plan: &RotationPlan) -> Result<Tensor> {
    let shape = x.shape();
    if shape.last().is_some_and(|d| d % 4 != 0) {
        return Err(Error::Config("2D-RoPE needs head dim divisible by 4".into()));
    }
    let (hp, wp) = grid;
    if shape.len() < 2 || shape[shape.len() - 2] != hp * wp {
        return Err(Error::Shape(format!(
            "sequence of shape {shape:?} does not cover a {hp}x{wp} grid"
        )));
    }
    apply_rotary(x, &TokenPositions::grid(hp, wp), plan)
}

/// `tokens[.., i, :] + table[i, :]` for `i < L`.
pub fn learned_posemb(tokens: &Tensor, table: &Tensor) -> Result<Tensor> {
    let ts = tokens.shape();
    if ts.len() < 2 || table.ndim() != 2 || table.shape()[1] != ts[ts.len() - 1] {
        return Err(Error::Dimension {
            op: "learned_posemb",
            lhs: ts.to_vec(),
            rhs: table.shape().to_vec(),
        });
    }
    let len = ts[ts.len() - 2];
    let cap = table.shape()[0];
    if len > cap {
        return Err(Error::Capacity { len, capacity: cap });
    }
    let rows = table.slice(0, 0, len)?;
    tokens.add(&rows)
}

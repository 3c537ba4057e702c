use serde::{Deserialize, Serialize};

use super::layers::{self, Init, EMBED_STD};
use super::patch::PatchGrid;
use crate::error::{Error, Result};
use crate::posenc::{learned_posemb, PositionKind, PositionMode, RotationPlan, TokenPositions};
use crate::tensor::{ParamSet, Scope, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadToken {
    /// Prepended learned token processed by every block.
    Cls,
    /// Learned probe attending over the final patch features.
    Map,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    HeadToken,
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub depth: usize,
    pub d_model: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub patch_size: usize,
    pub image_size: (usize, usize),
    pub position: PositionMode,
    pub head_token: HeadToken,
    pub pooling: Pooling,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 || self.d_model != self.heads * self.head_dim {
            return bad(format!(
                "d_model {} must equal heads {} x head_dim {}",
                self.d_model, self.heads, self.head_dim
            ));
        }
        if self.head_token == HeadToken::Map && self.pooling != Pooling::HeadToken {
            return bad("a MAP head token requires head-token pooling".into());
        }
        if self.head_token == HeadToken::None && self.pooling == Pooling::HeadToken {
            return bad("head-token pooling needs a CLS or MAP token".into());
        }
        let (h, w) = self.image_size;
        let p = self.patch_size;
        if p == 0 || h % p != 0 || w % p != 0 {
            return bad(format!("image {h}x{w} not divisible by patch size {p}"));
        }
        self.position.plan(self.head_dim)?;
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_size.0 / self.patch_size, self.image_size.1 / self.patch_size)
    }

    pub fn num_patches(&self) -> usize {
        let (hp, wp) = self.grid();
        hp * wp
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    /// Rows of `seq_features`.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + usize::from(self.head_token != HeadToken::None)
    }

    fn stacked_cls(&self) -> bool {
        self.head_token == HeadToken::Cls
    }
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[L, d_model]`; row 0 is the head token when there is one.
    pub seq_features: Tensor,
    /// `[d_model]`.
    pub pooled: Tensor,
    /// Leading non-patch rows in `seq_features` (0 or 1).
    pub head_rows: usize,
}

impl EncoderOutput {
    /// Just the patch rows of `seq_features`.
    pub fn patch_features(&self) -> Result<Tensor> {
        if self.head_rows == 0 {
            return Ok(self.seq_features.clone());
        }
        let l = self.seq_features.shape()[0];
        self.seq_features.slice(0, self.head_rows, l)
    }
}

/// Vision transformer over patch grids.
#[derive(Clone, Debug)]
pub struct VisionEncoder {
    cfg: EncoderConfig,
    plan: Option<RotationPlan>,
    positions: Option<TokenPositions>,
}

impl VisionEncoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let plan = cfg.position.plan(cfg.head_dim)?;
        let (hp, wp) = cfg.grid();
        let offset = usize::from(cfg.stacked_cls());
        // A stacked CLS token sits at (0,0); the patch grid then starts at (1,1).
        let positions = match cfg.position.kind {
            PositionKind::LearnedAbs => None,
            PositionKind::Rope1d => Some(TokenPositions::flat(hp * wp + offset)),
            PositionKind::Rope2d => {
                let mut pos = Vec::with_capacity(hp * wp + offset);
                if offset == 1 {
                    pos.push((0, 0));
                }
                pos.extend((0..hp * wp).map(|i| (i / wp + offset, i % wp + offset)));
                Some(TokenPositions::Grid(pos))
            }
        };
        Ok(Self { cfg, plan, positions })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn init(&self, init: &mut Init, p: &mut ParamSet, prefix: &str) -> Result<()> {
        let c = &self.cfg;
        let d = c.d_model;
        init.linear(p, &format!("{prefix}patch"), c.patch_dim(), d)?;
        match c.head_token {
            HeadToken::Cls => p.insert(format!("{prefix}cls"), init.normal(&[1, d], EMBED_STD), true)?,
            HeadToken::Map => {
                p.insert(format!("{prefix}map.probe"), init.normal(&[1, d], EMBED_STD), true)?;
                init.attention(p, &format!("{prefix}map.attn"), d)?;
                init.layer_norm(p, &format!("{prefix}map.ln"), d)?;
                init.linear(p, &format!("{prefix}map.mlp.fc1"), d, 4 * d)?;
                init.linear(p, &format!("{prefix}map.mlp.fc2"), 4 * d, d)?;
            }
            HeadToken::None => {}
        }
        if c.position.kind == PositionKind::LearnedAbs {
            let rows = c.num_patches() + usize::from(c.stacked_cls());
            p.insert(format!("{prefix}pos"), init.normal(&[rows, d], EMBED_STD), true)?;
        }
        for i in 0..c.depth {
            init.block(p, &format!("{prefix}blocks.{i}"), d)?;
        }
        if c.depth > 0 {
            init.layer_norm(p, &format!("{prefix}norm"), d)?;
        }
        Ok(())
    }

    /// Input to block 0: projected patches, head token and absolute positions.
    fn embed(&self, p: &Scope<'_>, patches: &Tensor) -> Result<Tensor> {
        let c = &self.cfg;
        if patches.shape() != [c.num_patches(), c.patch_dim()] {
            return Err(Error::Config(format!(
                "encoder expects patches [{}, {}], got {:?}",
                c.num_patches(),
                c.patch_dim(),
                patches.shape()
            )));
        }
        p.get_shaped("patch.weight", &[c.patch_dim(), c.d_model])?;
        let mut x = layers::linear(patches, p, "patch")?;
        if c.stacked_cls() {
            x = Tensor::concat(&[p.get_shaped("cls", &[1, c.d_model])?.clone(), x], 0)?;
        }
        if c.position.kind == PositionKind::LearnedAbs {
            x = learned_posemb(&x, p.get("pos")?)?;
        }
        Ok(x)
    }

    fn rope(&self) -> Option<(&RotationPlan, &TokenPositions)> {
        self.plan.as_ref().zip(self.positions.as_ref())
    }

    /// Encodes `patches [hp*wp, patch_dim]` (row-major grid order).
    pub fn encode_tokens(&self, p: &Scope<'_>, patches: &Tensor) -> Result<EncoderOutput> {
        let c = &self.cfg;
        let mut x = self.embed(p, patches)?;
        for i in 0..c.depth {
            x = layers::block(&x, &p.sub(&format!("blocks.{i}.")), c.heads, self.rope(), None)?;
        }
        if c.depth > 0 {
            x = layers::layer_norm(&x, p, "norm")?;
        }
        let n = c.num_patches();
        let (seq, head_rows) = match c.head_token {
            HeadToken::Map => {
                let m = p.sub("map.");
                let probe = m.get_shaped("probe", &[1, c.d_model])?;
                let pooled = probe.add(&layers::attention(probe, &x, &m.sub("attn."), c.heads, None, None)?)?;
                let pooled = pooled.add(&layers::mlp(&layers::layer_norm(&pooled, &m, "ln")?, &m.sub("mlp."))?)?;
                (Tensor::concat(&[pooled, x], 0)?, 1)
            }
            HeadToken::Cls => (x, 1),
            HeadToken::None => (x, 0),
        };
        let pooled = match c.pooling {
            Pooling::HeadToken => seq.slice(0, 0, 1)?.reshape(&[c.d_model])?,
            Pooling::Mean => {
                let mut w = vec![0.0; n + head_rows];
                w[head_rows..].iter_mut().for_each(|v| *v = 1.0 / n as f64);
                layers::weighted_rows(&seq, w)?
            }
        };
        Ok(EncoderOutput {
            seq_features: seq,
            pooled,
            head_rows,
        })
    }

    /// `encode_image`: features and pooled vector for one patch grid.
    pub fn encode(&self, p: &Scope<'_>, grid: &PatchGrid) -> Result<EncoderOutput> {
        if (grid.hp, grid.wp) != self.cfg.grid() {
            return Err(Error::Config(format!(
                "encoder built for a {:?} grid, got {}x{}",
                self.cfg.grid(),
                grid.hp,
                grid.wp
            )));
        }
        self.encode_tokens(p, &grid.tokens)
    }

    /// Pre-softmax attention logits `[H, L, L]` of block 0.
    pub fn first_block_logits(&self, p: &Scope<'_>, patches: &Tensor) -> Result<Tensor> {
        if self.cfg.depth == 0 {
            return Err(Error::Config("encoder has no attention blocks".into()));
        }
        let x = self.embed(p, patches)?;
        let b = p.sub("blocks.0.");
        let h = layers::layer_norm(&x, &b, "ln1")?;
        let rotary = self.rope().map(|(plan, pos)| layers::Rotary {
            plan,
            query: pos,
            key: pos,
        });
        let (q, k) = layers::project_qk(&h, &h, &b.sub("attn."), self.cfg.heads, rotary)?;
        layers::attention_logits(&q, &k)
    }
}

use super::layers::{self, Init, EMBED_STD};
use super::TokenSequence;
use crate::error::{Error, Result};
use crate::posenc::{RotationPlan, TokenPositions, DEFAULT_THETA_BASE};
use crate::tensor::{embedding, ParamSet, Scope, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub heads: usize,
    pub depth: usize,
    /// Width of the pixel-regression head; `None` builds a text-only decoder.
    pub patch_dim: Option<usize>,
    pub theta_base: f64,
}

impl DecoderConfig {
    pub fn text_only(vocab: usize, d_model: usize, heads: usize, depth: usize) -> Self {
        Self {
            vocab,
            d_model,
            heads,
            depth,
            patch_dim: None,
            theta_base: DEFAULT_THETA_BASE,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DecoderOutput {
    /// `[Lt, V]`; row `t` predicts text token `t`.
    pub text_logits: Option<Tensor>,
    /// `[Lv, patch_dim]`; row `i` predicts visual token `i`.
    pub patch_preds: Option<Tensor>,
}

/// Causal transformer over `[bos ‖ visual ‖ text]` with RoPE-1D positions.
///
/// Hidden row `p` has seen `bos` and the first `p` sequence elements, so it
/// predicts element `p`: visual tokens come first, then text.
#[derive(Clone, Debug)]
pub struct MultimodalDecoder {
    cfg: DecoderConfig,
    plan: RotationPlan,
}

impl MultimodalDecoder {
    pub fn new(cfg: DecoderConfig) -> Result<Self> {
        if cfg.heads == 0 || !cfg.d_model.is_multiple_of(cfg.heads) || cfg.vocab == 0 {
            return Err(Error::Config(format!("invalid decoder config {cfg:?}")));
        }
        let plan = RotationPlan::rope1d(cfg.d_model / cfg.heads, cfg.theta_base)?;
        Ok(Self { cfg, plan })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn init(&self, init: &mut Init, p: &mut ParamSet, prefix: &str) -> Result<()> {
        let c = &self.cfg;
        let d = c.d_model;
        p.insert(format!("{prefix}bos"), init.normal(&[1, d], EMBED_STD), true)?;
        p.insert(format!("{prefix}tok"), init.normal(&[c.vocab, d], EMBED_STD), true)?;
        for i in 0..c.depth {
            init.block(p, &format!("{prefix}blocks.{i}"), d)?;
        }
        init.layer_norm(p, &format!("{prefix}norm"), d)?;
        init.linear_std(p, &format!("{prefix}text_head"), d, c.vocab, EMBED_STD)?;
        if let Some(pd) = c.patch_dim {
            init.linear_std(p, &format!("{prefix}pixel_head"), d, pd, EMBED_STD)?;
        }
        Ok(())
    }

    pub fn embed_tokens(&self, p: &Scope<'_>, ids: &[usize]) -> Result<Tensor> {
        embedding(p.get_shaped("tok", &[self.cfg.vocab, self.cfg.d_model])?, ids)
    }

    /// Hidden states `[L+1, D]` for a sequence of embeddings `[L, D]`.
    pub fn hidden(&self, p: &Scope<'_>, seq: &Tensor) -> Result<Tensor> {
        let d = self.cfg.d_model;
        if seq.ndim() != 2 || seq.shape()[1] != d {
            return Err(Error::Shape(format!(
                "decoder expects [L, {d}] embeddings, got {:?}",
                seq.shape()
            )));
        }
        let bos = p.get_shaped("bos", &[1, d])?.clone();
        let mut x = Tensor::concat(&[bos, seq.clone()], 0)?;
        let len = x.shape()[0];
        let mask = layers::causal_mask(len);
        let positions = TokenPositions::flat(len);
        for i in 0..self.cfg.depth {
            x = layers::block(
                &x,
                &p.sub(&format!("blocks.{i}.")),
                self.cfg.heads,
                Some((&self.plan, &positions)),
                Some(&mask),
            )?;
        }
        layers::layer_norm(&x, p, "norm")
    }

    pub fn text_head(&self, p: &Scope<'_>, h: &Tensor) -> Result<Tensor> {
        layers::linear(h, p, "text_head")
    }

    /// `decode_multimodal`: visual tokens `[Lv, D]` followed by `text`.
    pub fn decode(&self, p: &Scope<'_>, visual: &Tensor, text: &TokenSequence) -> Result<DecoderOutput> {
        let text_emb = if text.is_empty() {
            None
        } else {
            Some(self.embed_tokens(p, &text.ids)?)
        };
        self.decode_embedded(p, visual, text_emb.as_ref())
    }

    /// As [`decode`](Self::decode) with text already embedded `[Lt, D]`.
    pub fn decode_embedded(&self, p: &Scope<'_>, visual: &Tensor, text_emb: Option<&Tensor>) -> Result<DecoderOutput> {
        let lv = visual.shape()[0];
        let (seq, lt) = match text_emb {
            Some(t) => (Tensor::concat(&[visual.clone(), t.clone()], 0)?, t.shape()[0]),
            None => (visual.clone(), 0),
        };
        let h = self.hidden(p, &seq)?;
        let text_logits = if lt > 0 {
            Some(self.text_head(p, &h.slice(0, lv, lv + lt)?)?)
        } else {
            None
        };
        let patch_preds = match self.cfg.patch_dim {
            Some(_) if lv > 0 => Some(layers::linear(&h.slice(0, 0, lv)?, p, "pixel_head")?),
            _ => None,
        };
        Ok(DecoderOutput {
            text_logits,
            patch_preds,
        })
    }
}

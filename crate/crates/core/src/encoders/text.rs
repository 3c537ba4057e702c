use super::layers::{self, Init, EMBED_STD};
use super::TokenSequence;
use crate::error::{Error, Result};
use crate::posenc::learned_posemb;
use crate::tensor::{embedding, ParamSet, Scope, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TextConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub heads: usize,
    pub depth: usize,
    pub max_len: usize,
}

/// Bidirectional transformer pooled by a mean over non-pad positions.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    cfg: TextConfig,
}

impl TextEncoder {
    pub fn new(cfg: TextConfig) -> Result<Self> {
        if cfg.heads == 0 || !cfg.d_model.is_multiple_of(cfg.heads) || cfg.vocab == 0 || cfg.max_len == 0 {
            return Err(Error::Config(format!("invalid text encoder config {cfg:?}")));
        }
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &TextConfig {
        &self.cfg
    }

    pub fn init(&self, init: &mut Init, p: &mut ParamSet, prefix: &str) -> Result<()> {
        let c = &self.cfg;
        p.insert(format!("{prefix}tok"), init.normal(&[c.vocab, c.d_model], EMBED_STD), true)?;
        p.insert(format!("{prefix}pos"), init.normal(&[c.max_len, c.d_model], EMBED_STD), true)?;
        for i in 0..c.depth {
            init.block(p, &format!("{prefix}blocks.{i}"), c.d_model)?;
        }
        if c.depth > 0 {
            init.layer_norm(p, &format!("{prefix}norm"), c.d_model)?;
        }
        Ok(())
    }

    /// `encode_text`: pooled `[d_model]`.
    pub fn encode(&self, p: &Scope<'_>, seq: &TokenSequence) -> Result<Tensor> {
        let n_real = seq.pad_mask.iter().filter(|&&m| !m).count();
        if seq.is_empty() || n_real == 0 {
            return Err(Error::Contract("cannot encode an empty text sequence".into()));
        }
        let c = &self.cfg;
        let tok = p.get_shaped("tok", &[c.vocab, c.d_model])?;
        let mut x = learned_posemb(&embedding(tok, &seq.ids)?, p.get("pos")?)?;
        let mask = seq.pad_mask.iter().any(|&m| m).then(|| layers::key_padding_mask(&seq.pad_mask));
        for i in 0..c.depth {
            x = layers::block(&x, &p.sub(&format!("blocks.{i}.")), c.heads, None, mask.as_ref())?;
        }
        if c.depth > 0 {
            x = layers::layer_norm(&x, p, "norm")?;
        }
        let w = seq
            .pad_mask
            .iter()
            .map(|&m| if m { 0.0 } else { 1.0 / n_real as f64 })
            .collect();
        layers::weighted_rows(&x, w)
    }
}

//! Patchification, the vision transformer encoder, the text encoder and the
//! causal multimodal decoder.

mod decoder;
mod patch;
mod text;
mod vision;

pub mod layers;

pub use decoder::{DecoderConfig, DecoderOutput, MultimodalDecoder};
pub use layers::Init;
pub use patch::{patchify, unpatchify, PatchGrid, PixelArray};
pub use text::{TextConfig, TextEncoder};
pub use vision::{EncoderConfig, EncoderOutput, HeadToken, Pooling, VisionEncoder};

use crate::error::{Error, Result};

/// Token ids with answer and padding masks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub answer_mask: Vec<bool>,
    pub pad_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, answer_mask: Vec<bool>, pad_mask: Vec<bool>) -> Result<Self> {
        if ids.len() != answer_mask.len() || ids.len() != pad_mask.len() {
            return Err(Error::Contract("token sequence arrays differ in length".into()));
        }
        if answer_mask.iter().zip(&pad_mask).any(|(&a, &p)| a && p) {
            return Err(Error::Contract("answer tokens cannot be padding".into()));
        }
        Ok(Self {
            ids,
            answer_mask,
            pad_mask,
        })
    }

    /// No answer tokens, no padding.
    pub fn plain(ids: Vec<usize>) -> Self {
        let n = ids.len();
        Self {
            ids,
            answer_mask: vec![false; n],
            pad_mask: vec![false; n],
        }
    }

    /// Every token is an answer token.
    pub fn answer(ids: Vec<usize>) -> Self {
        let n = ids.len();
        Self {
            ids,
            answer_mask: vec![true; n],
            pad_mask: vec![false; n],
        }
    }

    /// Right-pads with `pad_id` to `len`.
    pub fn padded(mut self, len: usize, pad_id: usize) -> Self {
        while self.ids.len() < len {
            self.ids.push(pad_id);
            self.answer_mask.push(false);
            self.pad_mask.push(true);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

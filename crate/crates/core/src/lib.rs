//! A desk-scale vision-language pretraining lab.
//!
//! Image encoders trained with contrastive, sigmoid, autoregressive or
//! composite objectives, with learned, 1D rotary or 2D rotary positions,
//! aligned to a small causal language model through a projection layer and
//! evaluated on synthetic spatial-reasoning questions.

pub mod align;
pub mod benchgen;
pub mod cli;
pub mod encoders;
pub mod error;
pub mod objectives;
pub mod parallel;
pub mod posenc;
pub mod pretrain;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ParamSet, Tensor};

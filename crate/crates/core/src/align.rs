//! Two-stage visual instruction alignment: encoder features pass through an
//! affine projection into the embedding space of a small causal language
//! model, which is trained on answer tokens only.

use crate::benchgen::{Vocabulary, END_ID};
use crate::encoders::{DecoderConfig, EncoderConfig, Init, MultimodalDecoder, PatchGrid, VisionEncoder};
use crate::error::{Error, Result};
use crate::tensor::{adamw_step, cosine_lr, cross_entropy, OptimizerState, ParamSet, Scope, Tensor, IGNORE_INDEX};

pub const ENCODER_PREFIX: &str = "enc.";
pub const PROJECTION_PREFIX: &str = "proj.";
pub const LM_PREFIX: &str = "lm.";
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.03;

/// Affine map from encoder width to language-model width.
#[derive(Clone, Debug)]
pub struct ProjectionLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ProjectionLayer {
    pub fn from_scope(p: &Scope<'_>) -> Result<Self> {
        Ok(Self {
            weight: p.get("weight")?.clone(),
            bias: p.get("bias")?.clone(),
        })
    }
}

pub fn project_visual(seq_features: &Tensor, proj: &ProjectionLayer) -> Result<Tensor> {
    let (w, b) = (proj.weight.shape(), proj.bias.shape());
    let f = seq_features.shape();
    if f.len() != 2 || w.len() != 2 || f[1] != w[0] || b != [w[1]] {
        return Err(Error::Config(format!(
            "projection {w:?} + {b:?} does not fit features {f:?}"
        )));
    }
    seq_features.matmul(&proj.weight)?.add(&proj.bias)
}

#[derive(Clone, Debug)]
pub struct AlignedSequence {
    /// `[Lv + Lq + La, d_lm]`.
    pub embeddings: Tensor,
    /// True exactly on answer positions.
    pub loss_mask: Vec<bool>,
    /// Index where text begins (`Lv`).
    pub boundary: usize,
    /// Token id at each text position, `None` on visual positions.
    pub ids: Vec<Option<usize>>,
}

impl AlignedSequence {
    /// Target per input position for a decoder whose hidden row `p` predicts
    /// element `p`: the element's own id where the mask is set.
    pub fn targets(&self) -> Vec<usize> {
        self.loss_mask
            .iter()
            .zip(&self.ids)
            .map(|(&m, id)| match (m, id) {
                (true, Some(id)) => *id,
                _ => IGNORE_INDEX,
            })
            .collect()
    }

    /// Targets in the conventional layout where position `p` predicts
    /// element `p + 1`; the last position has no target.
    pub fn shifted_targets(&self) -> Vec<usize> {
        let t = self.targets();
        t.iter().skip(1).copied().chain(std::iter::once(IGNORE_INDEX)).collect()
    }
}

pub fn build_sequence(
    h_v: &Tensor,
    instruction: &[usize],
    answer: &[usize],
    embed_table: &Tensor,
) -> Result<AlignedSequence> {
    if answer.is_empty() {
        return Err(Error::Contract("answer must contain at least one token".into()));
    }
    let lv = h_v.shape()[0];
    let text: Vec<usize> = instruction.iter().chain(answer).copied().collect();
    let emb = crate::tensor::embedding(embed_table, &text)?;
    let embeddings = if lv == 0 { emb } else { Tensor::concat(&[h_v.clone(), emb], 0)? };
    let mut loss_mask = vec![false; lv + instruction.len()];
    loss_mask.extend(std::iter::repeat_n(true, answer.len()));
    let mut ids = vec![None; lv];
    ids.extend(text.into_iter().map(Some));
    Ok(AlignedSequence {
        embeddings,
        loss_mask,
        boundary: lv,
        ids,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    ProjectionPretrain,
    FullFinetune,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainStageConfig {
    pub stage: Stage,
    pub lr_max: f64,
    pub global_batch: usize,
    /// Examples per backward pass; gradients accumulate over
    /// `global_batch / micro_batch` passes.
    pub micro_batch: usize,
    pub steps: usize,
    pub warmup_fraction: f64,
    pub trainable: Vec<String>,
}

impl TrainStageConfig {
    pub fn projection_pretrain(lr_max: f64, global_batch: usize, steps: usize) -> Self {
        Self {
            stage: Stage::ProjectionPretrain,
            lr_max,
            global_batch,
            micro_batch: global_batch,
            steps,
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
            trainable: vec![PROJECTION_PREFIX.into()],
        }
    }

    pub fn full_finetune(lr_max: f64, global_batch: usize, steps: usize) -> Self {
        Self {
            stage: Stage::FullFinetune,
            trainable: vec!["*".into()],
            ..Self::projection_pretrain(lr_max, global_batch, steps)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage == Stage::ProjectionPretrain && self.trainable != [PROJECTION_PREFIX] {
            return Err(Error::Config(format!(
                "projection pretraining trains only {PROJECTION_PREFIX}*, got {:?}",
                self.trainable
            )));
        }
        if self.global_batch == 0 || self.micro_batch == 0 || !self.global_batch.is_multiple_of(self.micro_batch) {
            return Err(Error::Config(format!(
                "global batch {} must be a positive multiple of micro batch {}",
                self.global_batch, self.micro_batch
            )));
        }
        if !(self.lr_max >= 0.0 && self.lr_max.is_finite()) || !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "bad learning-rate settings lr={} warmup={}",
                self.lr_max, self.warmup_fraction
            )));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.steps as f64).floor() as usize
    }

    /// Sets the trainable mask for this stage.
    pub fn apply(&self, params: &mut ParamSet) {
        params.set_trainable_prefixes(&self.trainable);
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        cosine_lr(step, self.steps, self.warmup_steps(), self.lr_max)
    }
}

/// One (image, instruction, answer) triple; `answer` ends with the end token.
#[derive(Clone, Debug)]
pub struct VlmExample {
    pub grid: PatchGrid,
    pub instruction: Vec<usize>,
    pub answer: Vec<usize>,
}

/// Encoder, projection and language model sharing one `ParamSet`.
#[derive(Clone, Debug)]
pub struct Vlm {
    pub encoder: VisionEncoder,
    pub lm: MultimodalDecoder,
}

impl Vlm {
    pub fn new(encoder: EncoderConfig, lm: DecoderConfig) -> Result<Self> {
        if lm.patch_dim.is_some() {
            return Err(Error::Config("the language model has no pixel head".into()));
        }
        Ok(Self {
            encoder: VisionEncoder::new(encoder)?,
            lm: MultimodalDecoder::new(lm)?,
        })
    }

    pub fn d_enc(&self) -> usize {
        self.encoder.config().d_model
    }

    pub fn d_lm(&self) -> usize {
        self.lm.config().d_model
    }

    pub fn vocab(&self) -> usize {
        self.lm.config().vocab
    }

    /// Fresh parameters for all three parts.
    pub fn init(&self, seed: u64) -> Result<ParamSet> {
        let mut p = ParamSet::new();
        let mut init = Init::new(seed);
        self.encoder.init(&mut init, &mut p, ENCODER_PREFIX)?;
        self.init_projection(&mut init, &mut p)?;
        self.lm.init(&mut init, &mut p, LM_PREFIX)?;
        Ok(p)
    }

    pub fn init_projection(&self, init: &mut Init, p: &mut ParamSet) -> Result<()> {
        init.linear(p, "proj", self.d_enc(), self.d_lm())
    }

    /// `H_v`: projected encoder features.
    pub fn visual_tokens(&self, p: &ParamSet, grid: &PatchGrid) -> Result<Tensor> {
        let feats = self.encoder.encode(&p.scope(ENCODER_PREFIX), grid)?;
        project_visual(&feats.seq_features, &ProjectionLayer::from_scope(&p.scope(PROJECTION_PREFIX))?)
    }

    pub fn sequence(&self, p: &ParamSet, ex: &VlmExample) -> Result<AlignedSequence> {
        let h_v = self.visual_tokens(p, &ex.grid)?;
        let table = p.get_shaped(&format!("{LM_PREFIX}tok"), &[self.vocab(), self.d_lm()])?;
        build_sequence(&h_v, &ex.instruction, &ex.answer, table)
    }

    /// Mean cross-entropy over the answer tokens of one example.
    pub fn example_loss(&self, p: &ParamSet, ex: &VlmExample) -> Result<Tensor> {
        let seq = self.sequence(p, ex)?;
        let lm = p.scope(LM_PREFIX);
        let h = self.lm.hidden(&lm, &seq.embeddings)?;
        let start = seq.loss_mask.iter().position(|&m| m).expect("non-empty answer");
        let len = seq.loss_mask.len();
        let logits = self.lm.text_head(&lm, &h.slice(0, start, len)?)?;
        let ids: Vec<usize> = seq.ids[start..].iter().map(|id| id.unwrap_or(IGNORE_INDEX)).collect();
        answer_loss(&logits, &ids, &seq.loss_mask[start..])
    }

    /// Mean of per-example losses.
    pub fn batch_loss(&self, p: &ParamSet, batch: &[VlmExample]) -> Result<Tensor> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let mut total: Option<Tensor> = None;
        for ex in batch {
            let l = self.example_loss(p, ex)?;
            total = Some(match total {
                None => l,
                Some(t) => t.add(&l)?,
            });
        }
        Ok(total.expect("non-empty").scale(1.0 / batch.len() as f64))
    }

    /// Greedy decoding of answer ids (end token excluded).
    pub fn generate_ids(&self, p: &ParamSet, grid: &PatchGrid, instruction: &[usize], max_tokens: usize) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        if max_tokens == 0 {
            return Ok(out);
        }
        let h_v = self.visual_tokens(p, grid)?.detach();
        let lm = p.scope(LM_PREFIX);
        let mut text: Vec<usize> = instruction.to_vec();
        while out.len() < max_tokens {
            let seq = if text.is_empty() {
                h_v.clone()
            } else {
                Tensor::concat(&[h_v.clone(), self.lm.embed_tokens(&lm, &text)?], 0)?
            };
            let h = self.lm.hidden(&lm, &seq)?;
            let last = h.shape()[0];
            let logits = self.lm.text_head(&lm, &h.slice(0, last - 1, last)?)?;
            let next = argmax(logits.data());
            if next == END_ID {
                break;
            }
            out.push(next);
            text.push(next);
        }
        Ok(out)
    }

    pub fn generate(
        &self,
        p: &ParamSet,
        grid: &PatchGrid,
        instruction: &[usize],
        vocab: &Vocabulary,
        max_tokens: usize,
    ) -> Result<String> {
        vocab.decode(&self.generate_ids(p, grid, instruction, max_tokens)?)
    }
}

/// Cross-entropy of `logits [L, V]` against `targets` on positions where
/// `loss_mask` is set; other targets are never read.
pub fn answer_loss(logits: &Tensor, targets: &[usize], loss_mask: &[bool]) -> Result<Tensor> {
    if targets.len() != loss_mask.len() {
        return Err(Error::Contract("targets and loss mask differ in length".into()));
    }
    let t: Vec<usize> = targets
        .iter()
        .zip(loss_mask)
        .map(|(&t, &m)| if m { t } else { IGNORE_INDEX })
        .collect();
    cross_entropy(logits, &t, IGNORE_INDEX)
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One optimizer step over `batch` (exactly `global_batch` examples),
/// accumulating gradients over micro-batches. Returns the batch loss.
pub fn vlm_step(
    model: &Vlm,
    params: &mut ParamSet,
    opt: &mut OptimizerState,
    stage: &TrainStageConfig,
    batch: &[VlmExample],
) -> Result<f64> {
    let step = opt.step as usize;
    let loss = accumulate_gradients(model, params, stage.micro_batch, batch)?;
    if !loss.is_finite() {
        params.zero_grad();
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("batch loss {loss}"),
        });
    }
    adamw_step(params, opt, stage.lr_at(step))?;
    Ok(loss)
}

/// Zeroes gradients, then back-propagates the batch-mean loss in chunks of
/// `micro_batch`, each scaled by its share of the batch.
pub fn accumulate_gradients(model: &Vlm, params: &ParamSet, micro_batch: usize, batch: &[VlmExample]) -> Result<f64> {
    if batch.is_empty() || micro_batch == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    params.zero_grad();
    let mut loss = 0.0;
    for chunk in batch.chunks(micro_batch) {
        let share = chunk.len() as f64 / batch.len() as f64;
        let l = model.batch_loss(params, chunk)?.scale(share);
        loss += l.item();
        l.backward()?;
    }
    Ok(loss)
}

//! Encoder pretraining over (image, caption) pairs with one of the four
//! objectives.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{
    layers, DecoderConfig, EncoderConfig, Init, MultimodalDecoder, PatchGrid, TextConfig, TextEncoder, TokenSequence,
    VisionEncoder,
};
use crate::error::{Error, Result};
use crate::objectives::{
    aim_loss_parts, clip_loss, ema_update, masked_indices, siglip2_loss_parts, siglip_loss, ArBatch, ContrastiveBatch,
    LossParts, Siglip2Batch, Siglip2Weights,
};
use crate::tensor::{adamw_step, cosine_lr, AdamWConfig, OptimizerState, ParamSet, Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Clip,
    Siglip,
    Siglip2,
    Aimv2,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Clip, Objective::Siglip, Objective::Siglip2, Objective::Aimv2];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Clip => "clip",
            Objective::Siglip => "siglip",
            Objective::Siglip2 => "siglip2",
            Objective::Aimv2 => "aimv2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective {s:?} (expected clip, siglip, siglip2 or aimv2)")))
    }

    /// Loss-curve columns after `step,lr,loss`.
    pub fn curve_terms(self) -> &'static [&'static str] {
        match self {
            Objective::Clip | Objective::Siglip => &[],
            Objective::Aimv2 => &["pixel_mse", "text_ce"],
            Objective::Siglip2 => &["siglip", "distill", "masked", "text_ce"],
        }
    }

    pub fn contrastive(self) -> bool {
        !matches!(self, Objective::Aimv2)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub objective: Objective,
    pub encoder: EncoderConfig,
    pub text_depth: usize,
    pub text_max_len: usize,
    pub decoder_depth: usize,
    pub vocab: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub init_temperature: f64,
    pub init_bias: f64,
    /// `None` means `⌈Lv/3⌉`.
    pub prefix_len: Option<usize>,
    pub pixel_weight: f64,
    pub weights: Siglip2Weights,
    pub phase_in: bool,
    pub mask_ratio: f64,
    pub ema_momentum: f64,
    pub precision: Precision,
}

/// One image with its caption ids.
#[derive(Clone, Debug)]
pub struct PretrainPair {
    pub grid: PatchGrid,
    pub caption: Vec<usize>,
}

/// Networks used by an objective; parameters live in one `ParamSet` under
/// `enc.`, `txt.`, `dec.`, `mask_head.` and `loss.`.
#[derive(Clone, Debug)]
pub struct PretrainModel {
    pub cfg: PretrainConfig,
    pub encoder: VisionEncoder,
    pub text: Option<TextEncoder>,
    pub decoder: Option<MultimodalDecoder>,
}

impl PretrainModel {
    pub fn new(cfg: PretrainConfig) -> Result<Self> {
        let encoder = VisionEncoder::new(cfg.encoder.clone())?;
        let d = cfg.encoder.d_model;
        let text = cfg
            .objective
            .contrastive()
            .then(|| {
                TextEncoder::new(TextConfig {
                    vocab: cfg.vocab,
                    d_model: d,
                    heads: cfg.encoder.heads,
                    depth: cfg.text_depth,
                    max_len: cfg.text_max_len,
                })
            })
            .transpose()?;
        let decoder = match cfg.objective {
            Objective::Aimv2 | Objective::Siglip2 => Some(MultimodalDecoder::new(DecoderConfig {
                patch_dim: (cfg.objective == Objective::Aimv2).then(|| cfg.encoder.patch_dim()),
                ..DecoderConfig::text_only(cfg.vocab, d, cfg.encoder.heads, cfg.decoder_depth)
            })?),
            _ => None,
        };
        if cfg.batch == 0 {
            return Err(Error::Config("pretraining batch must be positive".into()));
        }
        cfg.weights.validate()?;
        Ok(Self {
            cfg,
            encoder,
            text,
            decoder,
        })
    }

    pub fn init(&self, seed: u64) -> Result<ParamSet> {
        let mut p = ParamSet::new();
        p.set_precision(self.cfg.precision);
        let mut init = Init::new(seed);
        self.encoder.init(&mut init, &mut p, "enc.")?;
        if let Some(t) = &self.text {
            t.init(&mut init, &mut p, "txt.")?;
            let ln_t = self.cfg.init_temperature.ln();
            p.insert("loss.log_temp", Tensor::new(&[1], vec![ln_t])?, true)?;
            if matches!(self.cfg.objective, Objective::Siglip | Objective::Siglip2) {
                p.insert("loss.bias", Tensor::new(&[1], vec![self.cfg.init_bias])?, true)?;
            }
        }
        if let Some(d) = &self.decoder {
            d.init(&mut init, &mut p, "dec.")?;
        }
        if self.cfg.objective == Objective::Siglip2 {
            let d = self.cfg.encoder.d_model;
            init.linear(&mut p, "mask_head", d, self.cfg.encoder.patch_dim())?;
        }
        p.round_to_precision();
        Ok(p)
    }

    fn contrastive_batch(&self, p: &ParamSet, img_rows: Vec<Tensor>, batch: &[PretrainPair]) -> Result<ContrastiveBatch> {
        let text = self.text.as_ref().expect("contrastive objective");
        let d = self.cfg.encoder.d_model;
        let mut txt_rows = Vec::with_capacity(batch.len());
        for pair in batch {
            txt_rows.push(text.encode(&p.scope("txt."), &TokenSequence::plain(pair.caption.clone()))?.reshape(&[1, d])?);
        }
        let bias = if p.contains("loss.bias") {
            p.get("loss.bias")?.clone()
        } else {
            Tensor::scalar(0.0)
        };
        Ok(ContrastiveBatch {
            img_emb: Tensor::concat(&img_rows, 0)?,
            txt_emb: Tensor::concat(&txt_rows, 0)?,
            log_temperature: p.get("loss.log_temp")?.clone(),
            bias,
        })
    }

    /// Loss for one batch. `teacher` holds EMA encoder weights without the `enc.` prefix.
    pub fn loss(&self, p: &ParamSet, teacher: Option<&ParamSet>, batch: &[PretrainPair], step: usize, seed: u64) -> Result<LossParts> {
        let d = self.cfg.encoder.d_model;
        let enc = p.scope("enc.");
        match self.cfg.objective {
            Objective::Clip | Objective::Siglip => {
                let mut rows = Vec::with_capacity(batch.len());
                for pair in batch {
                    rows.push(self.encoder.encode(&enc, &pair.grid)?.pooled.reshape(&[1, d])?);
                }
                let cb = self.contrastive_batch(p, rows, batch)?;
                let total = if self.cfg.objective == Objective::Clip { clip_loss(&cb)? } else { siglip_loss(&cb)? };
                Ok(LossParts { total, terms: vec![] })
            }
            Objective::Aimv2 => {
                let dec = self.decoder.as_ref().expect("decoder");
                let mut total: Option<Tensor> = None;
                let mut sums = [0.0; 2];
                for pair in batch {
                    let feats = self.encoder.encode(&enc, &pair.grid)?.patch_features()?;
                    let out = dec.decode(&p.scope("dec."), &feats, &TokenSequence::plain(pair.caption.clone()))?;
                    let lv = pair.grid.len();
                    let parts = aim_loss_parts(&ArBatch {
                        patch_preds: out.patch_preds.expect("pixel head"),
                        patch_targets: pair.grid.tokens.clone(),
                        text_logits: out.text_logits.ok_or_else(|| Error::Contract("empty caption".into()))?,
                        text_targets: pair.caption.clone(),
                        prefix_len: self.cfg.prefix_len.unwrap_or_else(|| crate::objectives::default_prefix_len(lv)),
                        pixel_weight: self.cfg.pixel_weight,
                    })?;
                    sums[0] += parts.term("pixel_mse").unwrap_or(0.0);
                    sums[1] += parts.term("text_ce").unwrap_or(0.0);
                    total = Some(match total {
                        None => parts.total,
                        Some(t) => t.add(&parts.total)?,
                    });
                }
                let n = batch.len() as f64;
                Ok(LossParts {
                    total: total.expect("non-empty batch").scale(1.0 / n),
                    terms: vec![("pixel_mse", sums[0] / n), ("text_ce", sums[1] / n)],
                })
            }
            Objective::Siglip2 => self.siglip2_loss(p, teacher.ok_or_else(|| Error::Contract("missing teacher".into()))?, batch, step, seed),
        }
    }

    fn siglip2_loss(&self, p: &ParamSet, teacher: &ParamSet, batch: &[PretrainPair], step: usize, seed: u64) -> Result<LossParts> {
        let d = self.cfg.encoder.d_model;
        let enc = p.scope("enc.");
        let dec = self.decoder.as_ref().expect("decoder");
        let weights = self.cfg.weights.at_step(step, self.cfg.steps, self.cfg.phase_in);
        let (mut rows, mut student, mut teach, mut mpred, mut mtgt) = (vec![], vec![], vec![], vec![], vec![]);
        let (mut logits, mut targets) = (vec![], vec![]);
        for (j, pair) in batch.iter().enumerate() {
            let full = self.encoder.encode(&enc, &pair.grid)?;
            rows.push(full.pooled.reshape(&[1, d])?);
            let feats = full.patch_features()?;
            let out = dec.decode(&p.scope("dec."), &feats, &TokenSequence::plain(pair.caption.clone()))?;
            logits.push(out.text_logits.ok_or_else(|| Error::Contract("empty caption".into()))?);
            targets.extend_from_slice(&pair.caption);

            let n = pair.grid.len();
            let hidden = masked_indices(n, self.cfg.mask_ratio, seed ^ ((step as u64) << 20) ^ j as u64);
            let pd = pair.grid.patch_dim;
            let mut masked_input = pair.grid.tokens.to_vec();
            for &i in &hidden {
                masked_input[i * pd..(i + 1) * pd].iter_mut().for_each(|v| *v = 0.0);
            }
            let masked_out = self.encoder.encode_tokens(&enc, &Tensor::new(&[n, pd], masked_input)?)?;
            let mfeats = masked_out.patch_features()?;
            student.push(mfeats.clone());
            teach.push(self.encoder.encode(&teacher.scope(""), &pair.grid)?.patch_features()?.detach());
            for &i in &hidden {
                mpred.push(mfeats.slice(0, i, i + 1)?);
                mtgt.push(pair.grid.tokens.slice(0, i, i + 1)?);
            }
        }
        let masked_feats = Tensor::concat(&mpred, 0)?;
        let batch2 = Siglip2Batch {
            contrastive: self.contrastive_batch(p, rows, batch)?,
            student_feats: Tensor::concat(&student, 0)?,
            teacher_feats: Tensor::concat(&teach, 0)?,
            masked_preds: layers::linear(&masked_feats, &p.scope(""), "mask_head")?,
            masked_targets: Tensor::concat(&mtgt, 0)?,
            text_logits: Some(Tensor::concat(&logits, 0)?),
            text_targets: targets,
            weights,
        };
        siglip2_loss_parts(&batch2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub terms: Vec<f64>,
}

pub fn curve_csv(objective: Objective, rows: &[CurveRow]) -> String {
    let mut out = String::from("step,lr,loss");
    for t in objective.curve_terms() {
        out.push(',');
        out.push_str(t);
    }
    out.push('\n');
    for r in rows {
        out += &format!("{},{:e},{:.10e}", r.step, r.lr, r.loss);
        for v in &r.terms {
            out += &format!(",{v:.10e}");
        }
        out.push('\n');
    }
    out
}

/// Batches drawn as consecutive slices of a per-epoch shuffle.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    seed: u64,
    order: Vec<usize>,
}

impl EpochSampler {
    pub fn new(seed: u64) -> Self {
        Self { seed, order: Vec::new() }
    }

    /// Indices for `step` with batch size `b` over `n` items.
    pub fn batch(&mut self, step: usize, b: usize, n: usize) -> Vec<usize> {
        let end = (step + 1) * b;
        while self.order.len() < end {
            let epoch = (self.order.len() / n) as u64;
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
            self.order.extend(perm);
        }
        self.order[step * b..end].to_vec()
    }
}

/// Training state that survives a failed step.
pub struct PretrainRun {
    pub model: PretrainModel,
    pub params: ParamSet,
    pub teacher: Option<ParamSet>,
    pub opt: OptimizerState,
    pub curve: Vec<CurveRow>,
    seed: u64,
    sampler: EpochSampler,
}

impl PretrainRun {
    pub fn new(model: PretrainModel, seed: u64) -> Result<Self> {
        let mut params = model.init(seed)?;
        params.set_trainable_prefixes(&["*".into()]);
        let teacher = (model.cfg.objective == Objective::Siglip2).then(|| {
            let mut t = params.subset("enc.");
            t.freeze_all();
            t
        });
        let opt = OptimizerState::new(&params, AdamWConfig::default());
        Ok(Self {
            model,
            params,
            teacher,
            opt,
            curve: Vec::new(),
            seed,
            sampler: EpochSampler::new(seed),
        })
    }

    /// One update. A non-finite loss leaves parameters untouched.
    pub fn step(&mut self, pairs: &[PretrainPair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::EmptyResult("no pretraining pairs".into()));
        }
        let step = self.opt.step as usize;
        let idx = self.sampler.batch(step, self.model.cfg.batch, pairs.len());
        let batch: Vec<PretrainPair> = idx.iter().map(|&i| pairs[i].clone()).collect();
        self.params.zero_grad();
        let parts = self.model.loss(&self.params, self.teacher.as_ref(), &batch, step, self.seed)?;
        let loss = parts.total.item();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("{} loss {loss}", self.model.cfg.objective),
            });
        }
        parts.total.backward()?;
        let cfg = &self.model.cfg;
        let warmup = (cfg.warmup_fraction * cfg.steps as f64).floor() as usize;
        let lr = cosine_lr(step, cfg.steps, warmup, cfg.lr);
        adamw_step(&mut self.params, &mut self.opt, lr)?;
        if let Some(t) = &mut self.teacher {
            ema_update(t, &self.params.subset("enc."), cfg.ema_momentum)?;
        }
        let terms: Vec<f64> = cfg
            .objective
            .curve_terms()
            .iter()
            .map(|n| parts.term(n).unwrap_or(0.0))
            .collect();
        self.curve.push(CurveRow { step, lr, loss, terms });
        Ok(loss)
    }
}

//! Pretraining losses for image encoders: softmax contrastive, pairwise
//! sigmoid, autoregressive pixel + text, and a composite of sigmoid,
//! self-distillation, masked prediction and captioning terms.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{cross_entropy, ParamSet, Tensor, IGNORE_INDEX};

pub const INIT_TEMPERATURE: f64 = 0.07;
pub const INIT_SIGMOID_BIAS: f64 = -10.0;
pub const DEFAULT_MASK_RATIO: f64 = 0.25;
pub const DEFAULT_EMA_MOMENTUM: f64 = 0.99;
/// Dense terms switch on for this final fraction of training when phase-in is enabled.
pub const PHASE_IN_FRACTION: f64 = 0.2;

/// Paired embeddings; row `i` of both matrices is one pair.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch {
    pub img_emb: Tensor,
    pub txt_emb: Tensor,
    /// Scalar `ln τ`.
    pub log_temperature: Tensor,
    /// Scalar, used by the sigmoid loss only.
    pub bias: Tensor,
}

impl ContrastiveBatch {
    /// Constant temperature and bias.
    pub fn fixed(img_emb: Tensor, txt_emb: Tensor, temperature: f64, bias: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Contract(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self {
            img_emb,
            txt_emb,
            log_temperature: Tensor::scalar(temperature.ln()),
            bias: Tensor::scalar(bias),
        })
    }

    /// `S / τ` on L2-normalized rows, `[N, N]`.
    pub fn logits(&self) -> Result<Tensor> {
        let (a, b) = (self.img_emb.shape(), self.txt_emb.shape());
        if a.len() != 2 || a != b || a[0] == 0 {
            return Err(Error::Dimension {
                op: "contrastive",
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        if self.log_temperature.numel() != 1 || self.bias.numel() != 1 {
            return Err(Error::Contract("temperature and bias must be scalars".into()));
        }
        let img = self.img_emb.l2_normalize_rows()?;
        let txt = self.txt_emb.l2_normalize_rows()?;
        let sim = img.matmul(&txt.transpose(0, 1)?)?;
        sim.mul(&self.log_temperature.neg().exp())
    }
}

pub fn clip_loss(batch: &ContrastiveBatch) -> Result<Tensor> {
    let logits = batch.logits()?;
    let n = logits.shape()[0];
    let targets: Vec<usize> = (0..n).collect();
    let rows = cross_entropy(&logits, &targets, IGNORE_INDEX)?;
    let cols = cross_entropy(&logits.transpose(0, 1)?, &targets, IGNORE_INDEX)?;
    Ok(rows.add(&cols)?.scale(0.5))
}

pub fn siglip_loss(batch: &ContrastiveBatch) -> Result<Tensor> {
    let logits = batch.logits()?.add(&batch.bias)?;
    let n = logits.shape()[0];
    let z: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { -1.0 }).collect();
    let z = Tensor::new(&[n, n], z)?;
    Ok(logits.mul(&z)?.log_sigmoid().sum().scale(-1.0 / n as f64))
}

#[derive(Clone, Debug)]
pub struct ArBatch {
    pub patch_preds: Tensor,
    pub patch_targets: Tensor,
    pub text_logits: Tensor,
    pub text_targets: Vec<usize>,
    pub prefix_len: usize,
    pub pixel_weight: f64,
}

/// `⌈Lv / 3⌉`.
pub fn default_prefix_len(lv: usize) -> usize {
    lv.div_ceil(3)
}

/// A loss with its named scalar components.
#[derive(Clone, Debug)]
pub struct LossParts {
    pub total: Tensor,
    pub terms: Vec<(&'static str, f64)>,
}

impl LossParts {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

fn supervised_pixels(batch: &ArBatch) -> Result<Option<Tensor>> {
    let lv = batch.patch_preds.shape()[0];
    if batch.patch_preds.shape() != batch.patch_targets.shape() {
        return Err(Error::Dimension {
            op: "aim_loss",
            lhs: batch.patch_preds.shape().to_vec(),
            rhs: batch.patch_targets.shape().to_vec(),
        });
    }
    if batch.prefix_len > lv {
        return Err(Error::Contract(format!("prefix {} exceeds {lv} patches", batch.prefix_len)));
    }
    if batch.prefix_len == lv {
        return Ok(None);
    }
    let pred = batch.patch_preds.slice(0, batch.prefix_len, lv)?;
    let target = batch.patch_targets.slice(0, batch.prefix_len, lv)?.detach();
    Ok(Some(pred.mse(&target)?.scale(batch.pixel_weight)))
}

pub fn aim_loss_parts(batch: &ArBatch) -> Result<LossParts> {
    let ce = cross_entropy(&batch.text_logits, &batch.text_targets, IGNORE_INDEX)?;
    let (total, pixel) = match supervised_pixels(batch)? {
        Some(px) => (px.add(&ce)?, px.item()),
        None => (ce.clone(), 0.0),
    };
    Ok(LossParts {
        terms: vec![("pixel_mse", pixel), ("text_ce", ce.item())],
        total,
    })
}

pub fn aim_loss(batch: &ArBatch) -> Result<Tensor> {
    Ok(aim_loss_parts(batch)?.total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Siglip2Weights {
    pub sig: f64,
    pub distill: f64,
    pub masked: f64,
    pub ar: f64,
}

impl Default for Siglip2Weights {
    fn default() -> Self {
        Self {
            sig: 1.0,
            distill: 0.5,
            masked: 0.5,
            ar: 0.5,
        }
    }
}

impl Siglip2Weights {
    pub fn validate(&self) -> Result<()> {
        for w in [self.sig, self.distill, self.masked, self.ar] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Contract(format!("loss weights must be finite and non-negative: {self:?}")));
            }
        }
        Ok(())
    }

    /// With phase-in, the dense terms are zero before the last
    /// [`PHASE_IN_FRACTION`] of `total` steps.
    pub fn at_step(&self, step: usize, total: usize, phase_in: bool) -> Self {
        let start = ((1.0 - PHASE_IN_FRACTION) * total as f64).floor() as usize;
        if !phase_in || step >= start {
            return *self;
        }
        Self {
            distill: 0.0,
            masked: 0.0,
            ..*self
        }
    }
}

#[derive(Clone, Debug)]
pub struct Siglip2Batch {
    pub contrastive: ContrastiveBatch,
    pub student_feats: Tensor,
    /// Detached inside the loss.
    pub teacher_feats: Tensor,
    pub masked_preds: Tensor,
    pub masked_targets: Tensor,
    /// Captioning term; `None` contributes nothing.
    pub text_logits: Option<Tensor>,
    pub text_targets: Vec<usize>,
    pub weights: Siglip2Weights,
}

pub fn siglip2_loss_parts(batch: &Siglip2Batch) -> Result<LossParts> {
    let w = batch.weights;
    w.validate()?;
    let sig = siglip_loss(&batch.contrastive)?;
    let distill = batch.student_feats.mse(&batch.teacher_feats.detach())?;
    let masked = batch.masked_preds.mse(&batch.masked_targets.detach())?;
    let ar = match &batch.text_logits {
        Some(l) => Some(cross_entropy(l, &batch.text_targets, IGNORE_INDEX)?),
        None => None,
    };
    let mut total = sig.scale(w.sig);
    // Zero-weight terms are left out of the graph so (1,0,0,0) is siglip exactly.
    for (weight, term) in [(w.distill, Some(&distill)), (w.masked, Some(&masked)), (w.ar, ar.as_ref())] {
        if let (true, Some(t)) = (weight != 0.0, term) {
            total = total.add(&t.scale(weight))?;
        }
    }
    Ok(LossParts {
        terms: vec![
            ("siglip", sig.item()),
            ("distill", distill.item()),
            ("masked", masked.item()),
            ("text_ce", ar.map_or(0.0, |t| t.item())),
        ],
        total,
    })
}

pub fn siglip2_loss(batch: &Siglip2Batch) -> Result<Tensor> {
    Ok(siglip2_loss_parts(batch)?.total)
}

/// `θ_t ← m·θ_t + (1−m)·θ_s` for every entry; the teacher stays frozen.
pub fn ema_update(teacher: &mut ParamSet, student: &ParamSet, momentum: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::Contract(format!("momentum {momentum} outside [0, 1]")));
    }
    let t_names: Vec<&str> = teacher.names().collect();
    let s_names: Vec<&str> = student.names().collect();
    if t_names != s_names {
        return Err(Error::Contract("teacher and student parameter names differ".into()));
    }
    let mut updates = Vec::with_capacity(t_names.len());
    for (name, t) in teacher.iter() {
        let s = student.get(name)?;
        if s.shape() != t.shape() {
            return Err(Error::Contract(format!("shape mismatch for {name}")));
        }
        let data = t
            .data()
            .iter()
            .zip(s.data())
            .map(|(a, b)| momentum * a + (1.0 - momentum) * b)
            .collect();
        updates.push((name.to_string(), Tensor::new(t.shape(), data)?));
    }
    for (name, t) in updates {
        teacher.set_values(&name, &t)?;
    }
    teacher.freeze_all();
    Ok(())
}

/// Sorted patch indices to hide: `round(n·ratio)` of them, at least one.
pub fn masked_indices(n: usize, ratio: f64, seed: u64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let k = ((n as f64 * ratio).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

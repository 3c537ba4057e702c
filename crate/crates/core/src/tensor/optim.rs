use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments for exactly the trainable entries of a `ParamSet`.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub step: u64,
    pub config: AdamWConfig,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamWConfig) -> Self {
        let mut m = BTreeMap::new();
        for name in params.trainable_names() {
            let n = params.get(&name).expect("listed").numel();
            m.insert(name, vec![0.0; n]);
        }
        let v = m.clone();
        Self { step: 0, config, m, v }
    }

    pub fn tracked(&self) -> impl Iterator<Item = &str> {
        self.m.keys().map(String::as_str)
    }
}

/// One AdamW update with bias correction and decoupled weight decay.
/// Frozen entries are left untouched (same storage).
pub fn adamw_step(params: &mut ParamSet, state: &mut OptimizerState, lr: f64) -> Result<()> {
    let trainable = params.trainable_names();
    if !trainable.iter().map(String::as_str).eq(state.tracked()) {
        return Err(Error::Contract(
            "optimizer state does not track exactly the trainable parameters".into(),
        ));
    }
    let mut grads = Vec::with_capacity(trainable.len());
    for name in &trainable {
        let g = params
            .get(name)?
            .grad()
            .ok_or_else(|| Error::Contract(format!("no gradient for trainable parameter {name}")))?;
        grads.push(g);
    }

    state.step += 1;
    let AdamWConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let precision = params.precision();

    for (name, g) in trainable.iter().zip(grads) {
        let m = state.m.get_mut(name).expect("tracked");
        let v = state.v.get_mut(name).expect("tracked");
        let p = params.get(name)?;
        let mut out = Vec::with_capacity(p.numel());
        for (i, &pv) in p.data().iter().enumerate() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            let nv = pv - lr * weight_decay * pv - lr * mhat / (vhat.sqrt() + eps);
            out.push(precision.round(nv));
        }
        params.replace_data(name, out);
    }
    Ok(())
}

/// Linear warmup to `lr_max`, then half-cosine decay to 0 at `total_steps`.
/// Steps past the end clamp to the final value.
pub fn cosine_lr(step: usize, total_steps: usize, warmup_steps: usize, lr_max: f64) -> f64 {
    let step = step.min(total_steps);
    if step < warmup_steps {
        return lr_max * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps);
    if span == 0 {
        return 0.0;
    }
    let progress = (step - warmup_steps) as f64 / span as f64;
    lr_max * 0.5 * (1.0 + (PI * progress).cos())
}

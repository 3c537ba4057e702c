use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

/// Storage precision of parameters between optimizer steps.
///
/// Arithmetic is always carried out in `f64`. With `F32` every parameter is
/// rounded to the nearest `f32` after each update and checkpoints store
/// 4-byte scalars.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::F64 => v,
            Precision::F32 => v as f32 as f64,
        }
    }
}

#[derive(Clone)]
struct Entry {
    tensor: Tensor,
    trainable: bool,
}

/// Named parameters in lexicographic order, each trainable or frozen.
///
/// Trainable entries are leaves with `requires_grad`; frozen entries are
/// plain constants, so forward passes record no graph through them.
#[derive(Clone, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Entry>,
    precision: Precision,
}

impl std::fmt::Debug for ParamSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.entries.iter().map(|(k, e)| (k, (e.tensor.shape(), e.trainable))))
            .finish()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn set_precision(&mut self, precision: Precision) {
        self.precision = precision;
        if precision == Precision::F32 {
            let names: Vec<String> = self.entries.keys().cloned().collect();
            for n in names {
                let t = &self.entries[&n].tensor;
                let data = t.data().iter().map(|&v| precision.round(v)).collect();
                self.replace_data(&n, data);
            }
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let tensor = tensor.with_requires_grad(trainable);
        self.entries.insert(name, Entry { tensor, trainable });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Looks up `name` and checks its shape.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return Err(Error::Config(format!(
                "parameter {name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.tensor))
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Re-marks every entry; `pred(name)` decides trainability.
    pub fn set_trainable_by(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, e) in self.entries.iter_mut() {
            let t = pred(name);
            if t != e.trainable || e.tensor.requires_grad() != t {
                e.tensor = e.tensor.with_requires_grad(t);
                e.trainable = t;
            }
        }
    }

    /// Entries whose name starts with any of `prefixes` become trainable; the
    /// pattern `*` matches everything.
    pub fn set_trainable_prefixes(&mut self, prefixes: &[String]) {
        self.set_trainable_by(|n| prefixes.iter().any(|p| p == "*" || n.starts_with(p.as_str())));
    }

    pub fn freeze_all(&mut self) {
        self.set_trainable_by(|_| false);
    }

    pub fn zero_grad(&self) {
        for e in self.entries.values() {
            e.tensor.zero_grad();
        }
    }

    /// Swaps in new values for `name` as a fresh leaf.
    pub(crate) fn replace_data(&mut self, name: &str, data: Vec<f64>) {
        let e = self.entries.get_mut(name).expect("known parameter");
        let t = Tensor::new(e.tensor.shape(), data).expect("same shape");
        e.tensor = t.with_requires_grad(e.trainable);
    }

    /// Overwrites an existing entry's values, keeping its trainability.
    pub fn set_values(&mut self, name: &str, tensor: &Tensor) -> Result<()> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
        if e.tensor.shape() != tensor.shape() {
            return Err(Error::Compatibility(format!(
                "parameter {name}: shape {:?} does not match {:?}",
                tensor.shape(),
                e.tensor.shape()
            )));
        }
        self.replace_data(name, tensor.to_vec());
        Ok(())
    }

    /// Entries under `prefix`, re-keyed without it.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        let entries = self
            .entries
            .iter()
            .filter_map(|(k, e)| k.strip_prefix(prefix).map(|s| (s.to_string(), e.clone())))
            .collect();
        ParamSet {
            entries,
            precision: self.precision,
        }
    }

    /// Adds all of `other`'s entries with `prefix` prepended.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet) -> Result<()> {
        for (k, e) in &other.entries {
            self.insert(format!("{prefix}{k}"), e.tensor.clone(), e.trainable)?;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and little-endian values, in order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (k, e) in &self.entries {
            h.update((k.len() as u64).to_le_bytes());
            h.update(k.as_bytes());
            for d in e.tensor.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in e.tensor.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Raw bytes of every frozen entry, keyed by name.
    pub fn frozen_bytes(&self) -> BTreeMap<String, Vec<u8>> {
        self.entries
            .iter()
            .filter(|(_, e)| !e.trainable)
            .map(|(k, e)| (k.clone(), e.tensor.data().iter().flat_map(|v| v.to_le_bytes()).collect()))
            .collect()
    }

    /// Rounds every stored value to the storage precision.
    pub fn round_to_precision(&mut self) {
        if self.precision == Precision::F64 {
            return;
        }
        let prec = self.precision;
        let names: Vec<String> = self.entries.keys().cloned().collect();
        for name in names {
            let data = self.entries[&name].tensor.data().iter().map(|&v| prec.round(v)).collect();
            self.replace_data(&name, data);
        }
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.values().map(|e| e.tensor.numel()).sum()
    }
}

/// Read-only view of the entries under a name prefix.
#[derive(Clone)]
pub struct Scope<'a> {
    params: &'a ParamSet,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn get(&self, name: &str) -> Result<&'a Tensor> {
        self.params.get(&format!("{}{name}", self.prefix))
    }

    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&'a Tensor> {
        self.params.get_shaped(&format!("{}{name}", self.prefix), shape)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains(&format!("{}{name}", self.prefix))
    }

    pub fn sub(&self, prefix: &str) -> Scope<'a> {
        Scope {
            params: self.params,
            prefix: format!("{}{prefix}", self.prefix),
        }
    }
}

impl ParamSet {
    pub fn scope(&self, prefix: &str) -> Scope<'_> {
        Scope {
            params: self,
            prefix: prefix.to_string(),
        }
    }
}

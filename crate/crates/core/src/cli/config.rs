//! Run configuration: a TOML document of `[section]` tables with flat,
//! typed keys, checked against [`SCHEMA`]. Unknown keys are rejected and
//! every derived model config is built up front.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::align::{TrainStageConfig, Vlm};
use crate::benchgen::{Category, SceneConfig, SplitConfig, Vocabulary};
use crate::encoders::{DecoderConfig, EncoderConfig, HeadToken, Pooling};
use crate::error::{Error, Result};
use crate::objectives::Siglip2Weights;
use crate::posenc::{PositionKind, PositionMode};
use crate::pretrain::{Objective, PretrainConfig, PretrainModel};
use crate::tensor::Precision;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Str,
    Bool,
    StrList,
}

impl Kind {
    fn as_str(self) -> &'static str {
        match self {
            Kind::Int => "int",
            Kind::Float => "float",
            Kind::Str => "string",
            Kind::Bool => "bool",
            Kind::StrList => "string list",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    StrList(Vec<String>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::StrList(v) => {
                let items: Vec<String> = v.iter().map(|s| format!("{s:?}")).collect();
                write!(f, "[{}]", items.join(", "))
            }
        }
    }
}

pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    pub default: fn() -> Value,
    pub doc: &'static str,
}

macro_rules! key {
    ($k:literal, Int, $d:expr, $doc:literal) => {
        KeySpec { key: $k, kind: Kind::Int, default: || Value::Int($d), doc: $doc }
    };
    ($k:literal, Float, $d:expr, $doc:literal) => {
        KeySpec { key: $k, kind: Kind::Float, default: || Value::Float($d), doc: $doc }
    };
    ($k:literal, Str, $d:expr, $doc:literal) => {
        KeySpec { key: $k, kind: Kind::Str, default: || Value::Str($d.to_string()), doc: $doc }
    };
    ($k:literal, Bool, $d:expr, $doc:literal) => {
        KeySpec { key: $k, kind: Kind::Bool, default: || Value::Bool($d), doc: $doc }
    };
    ($k:literal, StrList, [$($d:literal),*], $doc:literal) => {
        KeySpec { key: $k, kind: Kind::StrList, default: || Value::StrList(vec![$($d.to_string()),*]), doc: $doc }
    };
}

pub const SCHEMA: &[KeySpec] = &[
    key!("experiment.name", Str, "", "row label in reports; empty means <objective>-<position_mode>"),
    key!("experiment.seed", Int, 0, "seed for data, init and batching"),
    key!("experiment.out_dir", Str, "run", "run artifacts, relative to the config file"),
    key!("data.dir", Str, "data", "dataset directory, relative to the config file"),
    key!("data.n_train", Int, 64, "training examples"),
    key!("data.n_eval", Int, 64, "held-out examples"),
    key!("data.canvas", Int, 64, "square image side in pixels"),
    key!("data.grid_rows", Int, 4, "scene grid rows"),
    key!("data.grid_cols", Int, 4, "scene grid columns"),
    key!("data.max_objects", Int, 6, "objects per scene (at least 2)"),
    key!("data.categories", StrList, ["relation_lr", "relation_ab", "count", "existence"], "question categories, cycled"),
    key!("encoder.objective", Str, "clip", "clip | siglip | siglip2 | aimv2"),
    key!("encoder.position_mode", Str, "rope2d", "learned | rope1d | rope2d"),
    key!("encoder.theta_base", Float, 10_000.0, "rotary frequency base"),
    key!("encoder.depth", Int, 2, "transformer blocks"),
    key!("encoder.d_model", Int, 64, "width"),
    key!("encoder.heads", Int, 4, "attention heads"),
    key!("encoder.patch_size", Int, 16, "patch side in pixels"),
    key!("encoder.head_token", Str, "none", "none | cls | map"),
    key!("encoder.pooling", Str, "mean", "mean | head_token"),
    key!("text.depth", Int, 1, "text encoder blocks (clip, siglip, siglip2)"),
    key!("text.max_len", Int, 64, "longest caption in tokens"),
    key!("decoder.depth", Int, 1, "pretraining decoder blocks (aimv2, siglip2)"),
    key!("pretrain.steps", Int, 100, "optimizer steps"),
    key!("pretrain.batch", Int, 8, "pairs per step"),
    key!("pretrain.lr", Float, 1e-3, "peak learning rate"),
    key!("pretrain.warmup_fraction", Float, 0.03, "linear warmup share of steps"),
    key!("pretrain.temperature", Float, 0.07, "initial contrastive temperature"),
    key!("pretrain.bias", Float, -10.0, "initial sigmoid bias"),
    key!("pretrain.prefix_len", Int, -1, "aimv2 unsupervised prefix; -1 means ceil(patches/3)"),
    key!("pretrain.pixel_weight", Float, 1.0, "aimv2 pixel loss weight"),
    key!("pretrain.w_sig", Float, 1.0, "siglip2 sigmoid term weight"),
    key!("pretrain.w_distill", Float, 0.5, "siglip2 distillation weight"),
    key!("pretrain.w_masked", Float, 0.5, "siglip2 masked prediction weight"),
    key!("pretrain.w_ar", Float, 0.5, "siglip2 captioning weight"),
    key!("pretrain.phase_in", Bool, false, "siglip2 dense terms only in the final 20% of steps"),
    key!("pretrain.mask_ratio", Float, 0.25, "siglip2 masked patch share"),
    key!("pretrain.ema_momentum", Float, 0.99, "siglip2 teacher momentum"),
    key!("lm.depth", Int, 2, "language model blocks"),
    key!("lm.d_model", Int, 64, "language model width"),
    key!("lm.heads", Int, 4, "language model heads"),
    key!("align.encoder_ckpt", Str, "", "encoder checkpoint; empty means <out_dir>/encoder.ckpt"),
    key!("align.stage1_steps", Int, 20, "projection pretraining steps"),
    key!("align.stage1_lr", Float, 1e-3, "projection pretraining peak lr"),
    key!("align.stage1_batch", Int, 8, "projection pretraining global batch"),
    key!("align.stage2_steps", Int, 60, "full finetuning steps"),
    key!("align.stage2_lr", Float, 1e-3, "full finetuning peak lr"),
    key!("align.stage2_batch", Int, 8, "full finetuning global batch"),
    key!("align.micro_batch", Int, 0, "examples per backward pass; 0 means the global batch"),
    key!("align.warmup_fraction", Float, 0.03, "linear warmup share of steps"),
    key!("eval.split", Str, "eval", "split to score"),
    key!("eval.max_tokens", Int, 4, "greedy decoding budget"),
    key!("report.configs", Str, "", "glob of run configs; empty means this config"),
    key!("report.out_dir", Str, "report", "report directory, relative to the config file"),
    key!("runtime.precision", Str, "f32", "parameter storage: f32 | f64"),
];

/// Keys whose values fix encoder parameter shapes or values.
const ENCODER_KEYS: &[&str] = &[
    "data.canvas",
    "encoder.objective",
    "encoder.position_mode",
    "encoder.theta_base",
    "encoder.depth",
    "encoder.d_model",
    "encoder.heads",
    "encoder.patch_size",
    "encoder.head_token",
    "encoder.pooling",
    "text.depth",
    "text.max_len",
    "decoder.depth",
    "runtime.precision",
];

const LM_KEYS: &[&str] = &["lm.depth", "lm.d_model", "lm.heads"];

pub fn spec(key: &str) -> Option<&'static KeySpec> {
    SCHEMA.iter().find(|s| s.key == key)
}

/// The schema as a TOML document of defaults with comments.
pub fn schema_text() -> String {
    let mut out = String::new();
    let mut section = "";
    for s in SCHEMA {
        let (sec, name) = s.key.split_once('.').expect("dotted key");
        if sec != section {
            if !section.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("[{sec}]\n"));
            section = sec;
        }
        out.push_str(&format!("# {} ({})\n{name} = {}\n", s.doc, s.kind.as_str(), (s.default)()));
    }
    out
}

fn convert(key: &str, kind: Kind, v: &toml::Value) -> Result<Value> {
    let bad = || Error::Config(format!("{key}: expected {}, got {v}", kind.as_str()));
    Ok(match (kind, v) {
        (Kind::Int, toml::Value::Integer(i)) => Value::Int(*i),
        (Kind::Float, toml::Value::Float(f)) => Value::Float(*f),
        (Kind::Float, toml::Value::Integer(i)) => Value::Float(*i as f64),
        (Kind::Str, toml::Value::String(s)) => Value::Str(s.clone()),
        (Kind::Bool, toml::Value::Boolean(b)) => Value::Bool(*b),
        (Kind::StrList, toml::Value::Array(a)) => Value::StrList(
            a.iter()
                .map(|x| x.as_str().map(str::to_string).ok_or_else(bad))
                .collect::<Result<_>>()?,
        ),
        _ => return Err(bad()),
    })
}

fn detail(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// Parsed values with defaults filled in, plus the directory that
/// relative paths resolve against.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, Value>,
    base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("config syntax: {e}")))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat);
        let mut values: BTreeMap<&'static str, Value> = SCHEMA.iter().map(|s| (s.key, (s.default)())).collect();
        for (k, v) in flat {
            let s = spec(&k).ok_or_else(|| Error::Config(format!("unknown config key {k:?}")))?;
            values.insert(s.key, convert(&k, s.kind, &v)?);
        }
        let cfg = Self {
            values,
            base_dir: base_dir.to_path_buf(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), detail(e))))
    }

    /// Replaces one value; the result is re-validated.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let s = spec(key).ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        let ok = matches!(
            (s.kind, &value),
            (Kind::Int, Value::Int(_))
                | (Kind::Float, Value::Float(_))
                | (Kind::Str, Value::Str(_))
                | (Kind::Bool, Value::Bool(_))
                | (Kind::StrList, Value::StrList(_))
        );
        if !ok {
            return Err(Error::Config(format!("{key}: expected {}", s.kind.as_str())));
        }
        let mut next = self.clone();
        next.values.insert(s.key, value);
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn value(&self, key: &str) -> &Value {
        self.values.get(key).unwrap_or_else(|| panic!("{key} is not in the schema"))
    }

    fn int(&self, key: &str) -> i64 {
        match self.value(key) {
            Value::Int(v) => *v,
            v => panic!("{key} holds {v:?}"),
        }
    }

    fn count(&self, key: &str) -> Result<usize> {
        usize::try_from(self.int(key)).map_err(|_| Error::Config(format!("{key} must be non-negative")))
    }

    fn float(&self, key: &str) -> f64 {
        match self.value(key) {
            Value::Float(v) => *v,
            v => panic!("{key} holds {v:?}"),
        }
    }

    fn str(&self, key: &str) -> &str {
        match self.value(key) {
            Value::Str(v) => v,
            v => panic!("{key} holds {v:?}"),
        }
    }

    fn bool(&self, key: &str) -> bool {
        match self.value(key) {
            Value::Bool(v) => *v,
            v => panic!("{key} holds {v:?}"),
        }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn seed(&self) -> u64 {
        self.int("experiment.seed") as u64
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(self.str("experiment.out_dir"))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.resolve(self.str("data.dir"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.resolve(self.str("report.out_dir"))
    }

    pub fn report_glob(&self) -> Option<String> {
        let g = self.str("report.configs");
        (!g.is_empty()).then(|| self.resolve(g).to_string_lossy().into_owned())
    }

    pub fn encoder_ckpt(&self) -> PathBuf {
        match self.str("align.encoder_ckpt") {
            "" => self.out_dir().join("encoder.ckpt"),
            p => self.resolve(p),
        }
    }

    pub fn eval_split(&self) -> &str {
        self.str("eval.split")
    }

    pub fn max_tokens(&self) -> Result<usize> {
        self.count("eval.max_tokens")
    }

    pub fn objective(&self) -> Result<Objective> {
        Objective::parse(self.str("encoder.objective"))
    }

    pub fn position(&self) -> Result<PositionKind> {
        PositionKind::parse(self.str("encoder.position_mode"))
    }

    pub fn variant(&self) -> Result<String> {
        Ok(match self.str("experiment.name") {
            "" => format!("{}-{}", self.objective()?, self.position()?.as_str()),
            n => n.to_string(),
        })
    }

    pub fn precision(&self) -> Result<Precision> {
        match self.str("runtime.precision") {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            p => Err(Error::Config(format!("runtime.precision must be f32 or f64, got {p:?}"))),
        }
    }

    pub fn scene(&self) -> Result<SceneConfig> {
        let canvas = self.count("data.canvas")?;
        let cfg = SceneConfig {
            canvas: (canvas, canvas),
            rows: self.count("data.grid_rows")?,
            cols: self.count("data.grid_cols")?,
            max_objects: self.count("data.max_objects")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn split(&self) -> Result<SplitConfig> {
        let categories = match self.value("data.categories") {
            Value::StrList(v) => v.iter().map(|c| Category::parse(c)).collect::<Result<Vec<_>>>()?,
            _ => unreachable!("schema type"),
        };
        if categories.is_empty() {
            return Err(Error::Config("data.categories must not be empty".into()));
        }
        Ok(SplitConfig {
            n_train: self.count("data.n_train")?,
            n_eval: self.count("data.n_eval")?,
            seed: self.seed(),
            scene: self.scene()?,
            categories,
        })
    }

    pub fn encoder(&self) -> Result<EncoderConfig> {
        let d = self.count("encoder.d_model")?;
        let heads = self.count("encoder.heads")?;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("encoder.d_model {d} is not a multiple of encoder.heads {heads}")));
        }
        let head_token = match self.str("encoder.head_token") {
            "none" => HeadToken::None,
            "cls" => HeadToken::Cls,
            "map" => HeadToken::Map,
            t => return Err(Error::Config(format!("encoder.head_token must be none, cls or map, got {t:?}"))),
        };
        let pooling = match self.str("encoder.pooling") {
            "mean" => Pooling::Mean,
            "head_token" => Pooling::HeadToken,
            t => return Err(Error::Config(format!("encoder.pooling must be mean or head_token, got {t:?}"))),
        };
        let canvas = self.count("data.canvas")?;
        let cfg = EncoderConfig {
            depth: self.count("encoder.depth")?,
            d_model: d,
            heads,
            head_dim: d / heads,
            patch_size: self.count("encoder.patch_size")?,
            image_size: (canvas, canvas),
            position: PositionMode::new(self.position()?, self.float("encoder.theta_base"))?,
            head_token,
            pooling,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pretrain(&self) -> Result<PretrainConfig> {
        let prefix = self.int("pretrain.prefix_len");
        let encoder = self.encoder()?;
        let prefix_len = match prefix {
            -1 => None,
            p if p >= 0 && (p as usize) < encoder.num_patches() => Some(p as usize),
            p => {
                return Err(Error::Config(format!(
                    "pretrain.prefix_len {p} must be -1 or below the patch count {}",
                    encoder.num_patches()
                )))
            }
        };
        let unit = |k: &str| {
            let v = self.float(k);
            if (0.0..1.0).contains(&v) {
                Ok(v)
            } else {
                Err(Error::Config(format!("{k} must lie in [0, 1), got {v}")))
            }
        };
        let positive = |k: &str| {
            let v = self.float(k);
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Config(format!("{k} must be positive, got {v}")))
            }
        };
        let bias = self.float("pretrain.bias");
        if !bias.is_finite() {
            return Err(Error::Config("pretrain.bias must be finite".into()));
        }
        let pixel_weight = self.float("pretrain.pixel_weight");
        if !(pixel_weight >= 0.0 && pixel_weight.is_finite()) {
            return Err(Error::Config("pretrain.pixel_weight must be finite and non-negative".into()));
        }
        let cfg = PretrainConfig {
            objective: self.objective()?,
            encoder,
            text_depth: self.count("text.depth")?,
            text_max_len: self.count("text.max_len")?,
            decoder_depth: self.count("decoder.depth")?,
            vocab: Vocabulary::standard().len(),
            steps: self.count("pretrain.steps")?,
            batch: self.count("pretrain.batch")?,
            lr: positive("pretrain.lr")?,
            warmup_fraction: unit("pretrain.warmup_fraction")?,
            init_temperature: positive("pretrain.temperature")?,
            init_bias: bias,
            prefix_len,
            pixel_weight,
            weights: Siglip2Weights {
                sig: self.float("pretrain.w_sig"),
                distill: self.float("pretrain.w_distill"),
                masked: self.float("pretrain.w_masked"),
                ar: self.float("pretrain.w_ar"),
            },
            phase_in: self.bool("pretrain.phase_in"),
            mask_ratio: unit("pretrain.mask_ratio")?,
            ema_momentum: unit("pretrain.ema_momentum")?,
            precision: self.precision()?,
        };
        PretrainModel::new(cfg.clone())?;
        Ok(cfg)
    }

    pub fn lm(&self) -> Result<DecoderConfig> {
        let cfg = DecoderConfig::text_only(
            Vocabulary::standard().len(),
            self.count("lm.d_model")?,
            self.count("lm.heads")?,
            self.count("lm.depth")?,
        );
        Ok(cfg)
    }

    pub fn vlm(&self) -> Result<Vlm> {
        Vlm::new(self.encoder()?, self.lm()?)
    }

    fn stage(&self, n: u8) -> Result<TrainStageConfig> {
        let lr = self.float(&format!("align.stage{n}_lr"));
        let batch = self.count(&format!("align.stage{n}_batch"))?;
        let steps = self.count(&format!("align.stage{n}_steps"))?;
        let mut cfg = if n == 1 {
            TrainStageConfig::projection_pretrain(lr, batch, steps)
        } else {
            TrainStageConfig::full_finetune(lr, batch, steps)
        };
        let micro = self.count("align.micro_batch")?;
        if micro != 0 {
            cfg.micro_batch = micro;
        }
        cfg.warmup_fraction = self.float("align.warmup_fraction");
        cfg.validate()
            .map_err(|e| Error::Config(format!("align stage {n}: {}", detail(e))))?;
        Ok(cfg)
    }

    pub fn stages(&self) -> Result<[TrainStageConfig; 2]> {
        Ok([self.stage(1)?, self.stage(2)?])
    }

    /// Builds every derived config so that a bad combination fails here
    /// rather than mid-run.
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|e| Error::Config(detail(e)))
    }

    fn check(&self) -> Result<()> {
        let split = self.split()?;
        let needs_pair = split
            .categories
            .iter()
            .any(|c| matches!(c, Category::RelationLr | Category::RelationAb));
        if needs_pair && split.scene.max_objects < 2 {
            return Err(Error::Config("relation questions need data.max_objects >= 2".into()));
        }
        // captions and count answers are spelled with single digit tokens
        let sc = &split.scene;
        if sc.rows > 10 || sc.cols > 10 || sc.max_objects > 9 {
            return Err(Error::Config(
                "the vocabulary spells numbers with one digit: grid sides must be <= 10 and data.max_objects <= 9".into(),
            ));
        }
        if split.n_train == 0 {
            return Err(Error::Config("data.n_train must be positive".into()));
        }
        let pre = self.pretrain()?;
        let longest_caption = 9 * split.scene.max_objects - 1;
        if pre.objective.contrastive() && pre.text_max_len < longest_caption {
            return Err(Error::Config(format!(
                "text.max_len {} is shorter than the longest caption ({longest_caption} tokens)",
                pre.text_max_len
            )));
        }
        self.vlm()?;
        self.stages()?;
        self.max_tokens()?;
        if self.eval_split() != "train" && self.eval_split() != "eval" {
            return Err(Error::Config(format!("eval.split must be train or eval, got {:?}", self.eval_split())));
        }
        Ok(())
    }

    fn hash_keys(&self, keys: &[&str], extra: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        for k in keys {
            h.update(format!("{k} = {}\n", self.value(k)).as_bytes());
        }
        h.update(extra.as_bytes());
        h.finalize().into()
    }

    /// Identifies the encoder architecture for checkpoint compatibility.
    pub fn encoder_hash(&self) -> [u8; 32] {
        self.hash_keys(ENCODER_KEYS, &Vocabulary::standard().hash())
    }

    /// Identifies the full vision-language model.
    pub fn vlm_hash(&self) -> [u8; 32] {
        let keys: Vec<&str> = ENCODER_KEYS.iter().chain(LM_KEYS).copied().collect();
        self.hash_keys(&keys, &Vocabulary::standard().hash())
    }

    /// Every value in schema order, as canonical TOML-like lines.
    pub fn canonical(&self) -> String {
        SCHEMA.iter().map(|s| format!("{} = {}\n", s.key, self.value(s.key))).collect()
    }
}

//! The subcommands. Each validates everything it needs before writing
//! anything, and every artifact it writes is listed with its SHA-256 in a
//! manifest next to it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint;
use super::config::{RunConfig, Value};
use crate::align::{vlm_step, TrainStageConfig, Vlm, VlmExample, ENCODER_PREFIX};
use crate::benchgen::{
    caption, evaluate, load_split, make_splits, read_ppm, render_csv, render_table, write_dataset, DatasetManifest,
    FnAnswerer, LoadedExample, ReportRow, Vocabulary,
};
use crate::encoders::{patchify, PatchGrid, PixelArray};
use crate::error::{Error, Result};
use crate::parallel::{par_map, worker_threads};
use crate::pretrain::{curve_csv, EpochSampler, PretrainModel, PretrainPair, PretrainRun};
use crate::tensor::{AdamWConfig, OptimizerState, ParamSet};

pub const ENCODER_CKPT: &str = "encoder.ckpt";
pub const STAGE1_CKPT: &str = "stage1.ckpt";
pub const VLM_CKPT: &str = "vlm.ckpt";
pub const EVAL_FILE: &str = "eval.json";

/// Command-line overrides shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub force: bool,
}

impl Options {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            ..Self::default()
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    out: Option<PathBuf>,
    force: bool,
}

impl Ctx {
    fn new(opts: &Options) -> Result<Self> {
        let mut cfg = RunConfig::load(&opts.config)?;
        if let Some(s) = opts.seed {
            let s = i64::try_from(s).map_err(|_| Error::Config(format!("seed {s} is too large")))?;
            cfg.set("experiment.seed", Value::Int(s))?;
        }
        Ok(Self {
            cfg,
            out: opts.out.clone(),
            force: opts.force,
        })
    }

    fn run_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| self.cfg.out_dir())
    }

    fn encoder_ckpt(&self) -> PathBuf {
        match &self.out {
            Some(o) if self.cfg.value("align.encoder_ckpt") == &Value::Str(String::new()) => o.join(ENCODER_CKPT),
            _ => self.cfg.encoder_ckpt(),
        }
    }
}

/// Summary written next to a subcommand's artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: String,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub completed: bool,
    /// File name to sha256 hex.
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], files: &mut BTreeMap<String, String>) -> Result<()> {
    checkpoint::write_atomic(&dir.join(name), bytes)?;
    files.insert(name.to_string(), sha_hex(bytes));
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_dataset_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let m = DatasetManifest::load(dir)?;
    let vocab = Vocabulary::standard();
    if m.vocab_hash != vocab.hash() {
        return Err(Error::Compatibility(format!(
            "dataset {} was built with vocabulary {}, expected {}",
            dir.display(),
            m.vocab_hash,
            vocab.hash()
        )));
    }
    Ok(m)
}

/// Reads one PPM and cuts it into patches for an encoder expecting `size`.
pub fn load_grid(path: &Path, size: (usize, usize), patch: usize) -> Result<PatchGrid> {
    let img = read_ppm(path)?;
    if (img.height, img.width) != size {
        return Err(Error::Compatibility(format!(
            "{} is {}x{}, the encoder expects {}x{}",
            path.display(),
            img.height,
            img.width,
            size.0,
            size.1
        )));
    }
    patchify(&PixelArray::from_rgb8(img.height, img.width, &img.data)?, patch)
}

fn load_grids(examples: &[LoadedExample], size: (usize, usize), patch: usize) -> Result<Vec<PatchGrid>> {
    par_map(examples.len(), worker_threads(), |i| load_grid(&examples[i].image_path, size, patch))
        .into_iter()
        .collect()
}

/// `gen-data`: writes the dataset to `data.dir` (or `--out`).
pub fn cmd_gen_data(opts: &Options) -> Result<DatasetManifest> {
    let ctx = Ctx::new(opts)?;
    let split = ctx.cfg.split()?;
    let dir = ctx.out.clone().unwrap_or_else(|| ctx.cfg.data_dir());
    let threads = worker_threads();
    let splits = make_splits(&split, threads)?;
    create_dir(&dir)?;
    write_dataset(&dir, &splits, split.seed, &Vocabulary::standard(), threads)
}

/// (image, caption) pairs from the training split.
pub fn pretrain_pairs(data_dir: &Path, model: &PretrainModel) -> Result<Vec<PretrainPair>> {
    let vocab = Vocabulary::standard();
    let train = load_split(data_dir, "train")?;
    let enc = &model.cfg.encoder;
    let grids = load_grids(&train, enc.image_size, enc.patch_size)?;
    train
        .iter()
        .zip(grids)
        .map(|(ex, grid)| {
            Ok(PretrainPair {
                grid,
                caption: vocab.encode(&caption(&ex.example.scene))?,
            })
        })
        .collect()
}

/// `pretrain-encoder`: trains the configured objective and writes
/// `encoder.ckpt`, `pretrain_loss.csv` and `pretrain_manifest.json`.
///
/// A non-finite loss stops training; the parameters from before that step
/// are saved and the error is returned.
pub fn cmd_pretrain_encoder(opts: &Options) -> Result<RunManifest> {
    let ctx = Ctx::new(opts)?;
    let cfg = ctx.cfg.pretrain()?;
    let data_dir = ctx.cfg.data_dir();
    let dataset = load_dataset_manifest(&data_dir)?;
    let model = PretrainModel::new(cfg)?;
    let pairs = pretrain_pairs(&data_dir, &model)?;
    if pairs.is_empty() {
        return Err(Error::EmptyResult("the training split is empty".into()));
    }
    let steps = model.cfg.steps;
    let objective = model.cfg.objective;
    let mut run = PretrainRun::new(model, ctx.cfg.seed())?;
    let mut failure = None;
    for _ in 0..steps {
        match run.step(&pairs) {
            Ok(_) => {}
            Err(e @ Error::NonFiniteLoss { .. }) => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let dir = ctx.run_dir();
    create_dir(&dir)?;
    let hash = ctx.cfg.encoder_hash();
    let mut files = BTreeMap::new();
    write_file(&dir, ENCODER_CKPT, &checkpoint::encode(&run.params, &hash)?, &mut files)?;
    write_file(&dir, "pretrain_loss.csv", curve_csv(objective, &run.curve).as_bytes(), &mut files)?;
    let manifest = RunManifest {
        command: "pretrain-encoder".into(),
        variant: ctx.cfg.variant()?,
        seed: ctx.cfg.seed(),
        config_hash: hex::encode(hash),
        dataset_hash: dataset.hash(),
        steps: run.curve.len(),
        final_loss: run.curve.last().map(|r| r.loss),
        completed: failure.is_none(),
        files,
    };
    checkpoint::write_atomic(&dir.join("pretrain_manifest.json"), json(&manifest).as_bytes())?;
    match failure {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

/// Copies `enc.*` entries from a pretraining checkpoint into `params`.
/// The two must agree on every encoder parameter name and shape.
pub fn load_encoder_into(params: &mut ParamSet, ckpt: &ParamSet) -> Result<()> {
    let wanted: Vec<String> = params.names().filter(|n| n.starts_with(ENCODER_PREFIX)).map(str::to_string).collect();
    for name in &wanted {
        let t = ckpt
            .get(name)
            .map_err(|_| Error::Compatibility(format!("encoder checkpoint lacks parameter {name}")))?;
        params.set_values(name, t)?;
    }
    if let Some(extra) = ckpt
        .names()
        .find(|n| n.starts_with(ENCODER_PREFIX) && !params.contains(n))
    {
        return Err(Error::Compatibility(format!(
            "encoder checkpoint has parameter {extra} that the configured encoder does not"
        )));
    }
    Ok(())
}

/// Replaces every value in `params` with the checkpoint's, which must hold
/// exactly the same names and shapes.
pub fn load_all_into(params: &mut ParamSet, ckpt: &ParamSet) -> Result<()> {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let t = ckpt
            .get(name)
            .map_err(|_| Error::Compatibility(format!("checkpoint lacks parameter {name}")))?;
        params.set_values(name, t)?;
    }
    if let Some(extra) = ckpt.names().find(|n| !params.contains(n)) {
        return Err(Error::Compatibility(format!("checkpoint has unexpected parameter {extra}")));
    }
    Ok(())
}

pub fn vlm_examples(examples: &[LoadedExample], vlm: &Vlm) -> Result<Vec<VlmExample>> {
    let vocab = Vocabulary::standard();
    let enc = vlm.encoder.config();
    let grids = load_grids(examples, enc.image_size, enc.patch_size)?;
    examples
        .iter()
        .zip(grids)
        .map(|(ex, grid)| {
            Ok(VlmExample {
                grid,
                instruction: vocab.encode(&ex.example.question)?,
                answer: vocab.encode_answer(&ex.example.answer)?,
            })
        })
        .collect()
}

/// Row of the alignment loss curve.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignRow {
    pub stage: u8,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

fn align_csv(rows: &[AlignRow]) -> String {
    let mut out = String::from("stage,step,lr,loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{:e},{:e}\n", r.stage, r.step, r.lr, r.loss));
    }
    out
}

/// Runs one stage in place. On a non-finite loss `params` keep the values
/// from before the failing step.
pub fn train_stage(
    vlm: &Vlm,
    params: &mut ParamSet,
    stage: &TrainStageConfig,
    examples: &[VlmExample],
    seed: u64,
    stage_id: u8,
    curve: &mut Vec<AlignRow>,
) -> Result<()> {
    stage.apply(params);
    let mut opt = OptimizerState::new(params, AdamWConfig::default());
    let mut sampler = EpochSampler::new(seed ^ u64::from(stage_id));
    for step in 0..stage.steps {
        let batch: Vec<VlmExample> = sampler
            .batch(step, stage.global_batch, examples.len())
            .into_iter()
            .map(|i| examples[i].clone())
            .collect();
        let loss = vlm_step(vlm, params, &mut opt, stage, &batch)?;
        curve.push(AlignRow {
            stage: stage_id,
            step,
            lr: stage.lr_at(step),
            loss,
        });
    }
    Ok(())
}

/// Fresh VLM parameters in the configured storage precision.
pub fn init_vlm(cfg: &RunConfig, vlm: &Vlm) -> Result<ParamSet> {
    let mut params = vlm.init(cfg.seed())?;
    params.set_precision(cfg.precision()?);
    params.round_to_precision();
    Ok(params)
}

/// `align`: loads the encoder checkpoint, trains the projection (stage 1)
/// then everything (stage 2), writing `stage1.ckpt`, `vlm.ckpt`,
/// `align_loss.csv` and `align_manifest.json`.
pub fn cmd_align(opts: &Options) -> Result<RunManifest> {
    let ctx = Ctx::new(opts)?;
    let vlm = ctx.cfg.vlm()?;
    let stages = ctx.cfg.stages()?;
    let ckpt = checkpoint::load(&ctx.encoder_ckpt(), Some(&ctx.cfg.encoder_hash()), ctx.force)?;
    let mut params = init_vlm(&ctx.cfg, &vlm)?;
    load_encoder_into(&mut params, &ckpt.params)?;
    params.round_to_precision();
    let data_dir = ctx.cfg.data_dir();
    let dataset = load_dataset_manifest(&data_dir)?;
    let examples = vlm_examples(&load_split(&data_dir, "train")?, &vlm)?;
    if examples.is_empty() {
        return Err(Error::EmptyResult("the training split is empty".into()));
    }

    let dir = ctx.run_dir();
    let hash = ctx.cfg.vlm_hash();
    let seed = ctx.cfg.seed();
    let mut curve = Vec::new();
    let mut files = BTreeMap::new();
    let mut failure = None;
    for (i, (stage, name)) in stages.iter().zip([STAGE1_CKPT, VLM_CKPT]).enumerate() {
        let res = train_stage(&vlm, &mut params, stage, &examples, seed, i as u8 + 1, &mut curve);
        if let Err(e) = &res {
            if !matches!(e, Error::NonFiniteLoss { .. }) {
                return Err(res.unwrap_err());
            }
        }
        create_dir(&dir)?;
        write_file(&dir, name, &checkpoint::encode(&params, &hash)?, &mut files)?;
        if let Err(e) = res {
            failure = Some(e);
            break;
        }
    }
    write_file(&dir, "align_loss.csv", align_csv(&curve).as_bytes(), &mut files)?;
    let manifest = RunManifest {
        command: "align".into(),
        variant: ctx.cfg.variant()?,
        seed,
        config_hash: hex::encode(hash),
        dataset_hash: dataset.hash(),
        steps: curve.len(),
        final_loss: curve.last().map(|r| r.loss),
        completed: failure.is_none(),
        files,
    };
    checkpoint::write_atomic(&dir.join("align_manifest.json"), json(&manifest).as_bytes())?;
    match failure {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

#[derive(Serialize)]
struct Prediction<'a> {
    index: usize,
    category: &'a str,
    question: &'a str,
    answer: &'a str,
    prediction: &'a str,
}

/// `evaluate`: greedy answers from `vlm.ckpt` on the configured split,
/// scored by exact match; writes `eval.json` and `predictions.jsonl`.
pub fn cmd_evaluate(opts: &Options) -> Result<ReportRow> {
    let ctx = Ctx::new(opts)?;
    let vlm = ctx.cfg.vlm()?;
    let dir = ctx.run_dir();
    let ckpt = checkpoint::load(&dir.join(VLM_CKPT), Some(&ctx.cfg.vlm_hash()), ctx.force)?;
    let mut params = init_vlm(&ctx.cfg, &vlm)?;
    load_all_into(&mut params, &ckpt.params)?;
    let data_dir = ctx.cfg.data_dir();
    load_dataset_manifest(&data_dir)?;
    let loaded = load_split(&data_dir, ctx.cfg.eval_split())?;
    if loaded.is_empty() {
        return Err(Error::EmptyResult(format!("split {} is empty", ctx.cfg.eval_split())));
    }
    let prompts = vlm_examples(&loaded, &vlm)?;
    let vocab = Vocabulary::standard();
    let max_tokens = ctx.cfg.max_tokens()?;
    let threads = worker_threads();
    let answers: Vec<Result<String>> = par_map(prompts.len(), threads, |i| {
        vlm.generate(&params, &prompts[i].grid, &prompts[i].instruction, &vocab, max_tokens)
    });
    let answers: Vec<String> = answers.into_iter().collect::<Result<_>>()?;
    let examples: Vec<_> = loaded.iter().map(|l| l.example.clone()).collect();
    let answerer = FnAnswerer(|i: usize, _: &_| Ok(answers[i].clone()));
    let result = evaluate(&answerer, &examples, threads)?;
    let row = ReportRow {
        variant: ctx.cfg.variant()?,
        position_mode: ctx.cfg.position()?.as_str().to_string(),
        objective: ctx.cfg.objective()?.as_str().to_string(),
        result,
    };
    let mut preds = String::new();
    for (i, (ex, pred)) in examples.iter().zip(&answers).enumerate() {
        preds.push_str(
            &serde_json::to_string(&Prediction {
                index: i,
                category: ex.category.as_str(),
                question: &ex.question,
                answer: &ex.answer,
                prediction: pred,
            })
            .expect("serializable"),
        );
        preds.push('\n');
    }
    create_dir(&dir)?;
    checkpoint::write_atomic(&dir.join("predictions.jsonl"), preds.as_bytes())?;
    checkpoint::write_atomic(&dir.join(EVAL_FILE), json(&row).as_bytes())?;
    Ok(row)
}

/// Output of `grid-report`.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub csv: String,
    pub table: String,
    pub dir: PathBuf,
}

/// `grid-report`: collects `eval.json` from every config matched by
/// `report.configs` (or just this config) and writes `report.csv` and
/// `report.txt`. Configs without an evaluation are skipped with a note on
/// stderr; no rows at all is an empty-result error.
pub fn cmd_grid_report(opts: &Options) -> Result<Report> {
    let ctx = Ctx::new(opts)?;
    let configs: Vec<PathBuf> = match ctx.cfg.report_glob() {
        None => vec![opts.config.clone()],
        Some(pattern) => {
            let mut v: Vec<PathBuf> = glob::glob(&pattern)
                .map_err(|e| Error::Config(format!("report.configs: {e}")))?
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("report.configs: {e}")))?;
            v.sort();
            v
        }
    };
    let mut rows = Vec::new();
    for path in &configs {
        let run = RunConfig::load(path)?;
        let eval = run.out_dir().join(EVAL_FILE);
        if !eval.exists() {
            eprintln!("skipping {}: no {}", path.display(), eval.display());
            continue;
        }
        let text = std::fs::read_to_string(&eval).map_err(|e| Error::io(&eval, e))?;
        let row: ReportRow =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", eval.display())))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyResult(format!(
            "no evaluated runs among {} config(s)",
            configs.len()
        )));
    }
    let csv = render_csv(&rows)?;
    let table = render_table(&rows)?;
    let dir = ctx.out.clone().unwrap_or_else(|| ctx.cfg.report_dir());
    create_dir(&dir)?;
    checkpoint::write_atomic(&dir.join("report.csv"), csv.as_bytes())?;
    checkpoint::write_atomic(&dir.join("report.txt"), table.as_bytes())?;
    Ok(Report { rows, csv, table, dir })
}

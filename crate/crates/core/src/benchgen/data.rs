use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::qa::{gen_qa, Category, QAExample, Query};
use super::render::{encode_ppm, render};
use super::scene::{gen_scene, SceneConfig, SceneSpec};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::parallel::par_map;

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub scene: SceneConfig,
    /// Example `i` gets `categories[i % len]`.
    pub categories: Vec<Category>,
}

impl SplitConfig {
    pub fn new(n_train: usize, n_eval: usize, seed: u64) -> Self {
        Self {
            n_train,
            n_eval,
            seed,
            scene: SceneConfig::default(),
            categories: Category::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<QAExample>,
    pub eval: Vec<QAExample>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Eval,
}

/// Streams for the two splits never share a seed.
fn derive_seed(base: u64, split: Split, index: usize, attempt: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update([split as u8]);
    h.update((index as u64).to_le_bytes());
    h.update(attempt.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// First attempt `>= from` that yields a question of the required category.
fn generate_at(cfg: &SplitConfig, split: Split, index: usize, from: u64) -> Result<(QAExample, u64)> {
    let category = cfg.categories[index % cfg.categories.len()];
    for attempt in from..from + 10_000 {
        let seed = derive_seed(cfg.seed, split, index, attempt);
        let scene = gen_scene(seed, &cfg.scene)?;
        if let Some(ex) = gen_qa(&scene, category, seed ^ 0x5151_5151) {
            return Ok((ex, attempt));
        }
    }
    Err(Error::Config(format!("scene config cannot produce {category:?} questions")))
}

/// Train and eval examples with disjoint scene content.
pub fn make_splits(cfg: &SplitConfig, threads: usize) -> Result<Splits> {
    cfg.scene.validate()?;
    if cfg.categories.is_empty() {
        return Err(Error::Config("at least one question category is required".into()));
    }
    let gen = |split, n| -> Result<Vec<(QAExample, u64)>> {
        par_map(n, threads, |i| generate_at(cfg, split, i, 0)).into_iter().collect()
    };
    let train: Vec<QAExample> = gen(Split::Train, cfg.n_train)?.into_iter().map(|(e, _)| e).collect();
    let seen: HashSet<[u8; 32]> = train.iter().map(|e| e.scene.content_hash()).collect();
    let mut eval = Vec::with_capacity(cfg.n_eval);
    for (i, (mut ex, mut attempt)) in gen(Split::Eval, cfg.n_eval)?.into_iter().enumerate() {
        while seen.contains(&ex.scene.content_hash()) {
            (ex, attempt) = generate_at(cfg, Split::Eval, i, attempt + 1)?;
        }
        eval.push(ex);
    }
    Ok(Splits { train, eval })
}

/// One JSON Lines row; field order is the on-disk key order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Record {
    pub scene: SceneSpec,
    pub category: Category,
    pub question: String,
    pub answer: String,
    pub image_path: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub counts: BTreeMap<String, usize>,
    pub vocab_hash: String,
    /// Relative path to sha256 hex.
    pub files: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `train.jsonl`, `eval.jsonl`, `images/<split>/NNNNNN.ppm` and
/// `manifest.json` under `dir`.
pub fn write_dataset(dir: &Path, splits: &Splits, seed: u64, vocab: &Vocabulary, threads: usize) -> Result<DatasetManifest> {
    let mut files = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (name, examples) in [("train", &splits.train), ("eval", &splits.eval)] {
        let img_dir = dir.join("images").join(name);
        std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let written: Vec<Result<(String, String)>> = par_map(examples.len(), threads, |i| {
            let rel = format!("images/{name}/{i:06}.ppm");
            let bytes = encode_ppm(&render(&examples[i].scene));
            let path = dir.join(&rel);
            std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            Ok((rel, sha_hex(&bytes)))
        });
        let mut jsonl = Vec::new();
        for (ex, w) in examples.iter().zip(written) {
            let (rel, sha) = w?;
            let rec = Record {
                scene: ex.scene.clone(),
                category: ex.category,
                question: ex.question.clone(),
                answer: ex.answer.clone(),
                image_path: rel.clone(),
            };
            serde_json::to_writer(&mut jsonl, &rec).map_err(|e| Error::Format(e.to_string()))?;
            jsonl.push(b'\n');
            files.insert(rel, sha);
        }
        let path = dir.join(format!("{name}.jsonl"));
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&jsonl).map_err(|e| Error::io(&path, e))?;
        files.insert(format!("{name}.jsonl"), sha_hex(&jsonl));
        counts.insert(name.to_string(), examples.len());
    }
    let manifest = DatasetManifest {
        seed,
        counts,
        vocab_hash: vocab.hash(),
        files,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct LoadedExample {
    pub example: QAExample,
    pub image_path: PathBuf,
}

/// Reads `<dir>/<name>.jsonl`; answers are re-derived and must agree.
pub fn load_split(dir: &Path, name: &str) -> Result<Vec<LoadedExample>> {
    let path = dir.join(format!("{name}.jsonl"));
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |m: String| Error::Format(format!("{}:{}: {m}", path.display(), ln + 1));
        let rec: Record = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let query = Query::parse(&rec.question)?;
        let ex = QAExample::from_query(rec.scene, query).ok_or_else(|| bad("question not answerable".into()))?;
        if ex.answer != rec.answer || ex.category != rec.category {
            return Err(bad(format!("stored answer {:?} disagrees with the scene", rec.answer)));
        }
        out.push(LoadedExample {
            example: ex,
            image_path: dir.join(rec.image_path),
        });
    }
    Ok(out)
}

//! Identical config and seed give identical bytes for every artifact.

use svlb::cli::{cmd_gen_data, Options};

use super::grid::{both, tree};

pub fn run() -> Result<String, String> {
    let (a, b) = both()?;
    let (ta, tb) = (tree(&a.root), tree(&b.root));
    if ta.keys().ne(tb.keys()) {
        return Err("the two runs wrote different file sets".into());
    }
    let mut kinds = std::collections::BTreeMap::<String, usize>::new();
    for (path, bytes) in &ta {
        if &tb[path] != bytes {
            return Err(format!("{} differs between runs", path.display()));
        }
        let ext = path.extension().map_or("other".into(), |e| e.to_string_lossy().into_owned());
        *kinds.entry(ext).or_default() += 1;
    }
    for needed in ["ckpt", "json", "csv", "jsonl", "ppm"] {
        if !kinds.contains_key(needed) {
            return Err(format!("no .{needed} artifacts were compared"));
        }
    }
    // a different seed must actually change the data
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut opts = Options::new(a.root.join("report.toml"));
    opts.out = Some(dir.path().join("data"));
    let same = cmd_gen_data(&opts).map_err(|e| e.to_string())?;
    opts.seed = Some(12);
    opts.out = Some(dir.path().join("other"));
    let other = cmd_gen_data(&opts).map_err(|e| e.to_string())?;
    let original = std::fs::read(a.root.join("data/manifest.json")).map_err(|e| e.to_string())?;
    if std::fs::read(dir.path().join("data/manifest.json")).ok() != Some(original) {
        return Err("gen-data manifest not reproduced".into());
    }
    if same.hash() == other.hash() {
        return Err("a different seed produced the same dataset".into());
    }
    let summary: Vec<String> = kinds.iter().map(|(k, n)| format!("{n} .{k}")).collect();
    Ok(format!("{} files bit-identical ({}); a new seed changes the dataset hash", ta.len(), summary.join(", ")))
}

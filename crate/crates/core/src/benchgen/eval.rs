use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::qa::{answer_space, normalize_answer, Category, QAExample};
use crate::error::{Error, Result};
use crate::parallel::par_map;

/// Anything that answers benchmark questions. `index` is the example's
/// position in the evaluated file, for deterministic stochastic answerers.
pub trait Answerer: Sync {
    fn answer(&self, index: usize, example: &QAExample) -> Result<String>;
}

/// Always right.
pub struct OracleAnswerer;

impl Answerer for OracleAnswerer {
    fn answer(&self, _: usize, ex: &QAExample) -> Result<String> {
        Ok(ex.answer.clone())
    }
}

/// Always silent.
pub struct EmptyAnswerer;

impl Answerer for EmptyAnswerer {
    fn answer(&self, _: usize, _: &QAExample) -> Result<String> {
        Ok(String::new())
    }
}

/// Uniform guess over the category's answer space.
pub struct RandomAnswerer {
    pub seed: u64,
    pub max_objects: usize,
}

impl Answerer for RandomAnswerer {
    fn answer(&self, index: usize, ex: &QAExample) -> Result<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(index as u64).wrapping_mul(0x9e37_79b9));
        let space = answer_space(ex.category, self.max_objects);
        Ok(space.choose(&mut rng).cloned().unwrap_or_default())
    }
}

pub struct FnAnswerer<F>(pub F);

impl<F> Answerer for FnAnswerer<F>
where
    F: Fn(usize, &QAExample) -> Result<String> + Sync,
{
    fn answer(&self, index: usize, ex: &QAExample) -> Result<String> {
        (self.0)(index, ex)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_category: BTreeMap<Category, Accuracy>,
    pub overall: Accuracy,
}

impl EvalResult {
    pub fn accuracy(&self, c: Category) -> Option<f64> {
        self.per_category.get(&c).and_then(Accuracy::value)
    }
}

/// Exact match after whitespace and case normalization.
pub fn evaluate(answerer: &dyn Answerer, examples: &[QAExample], threads: usize) -> Result<EvalResult> {
    let hits: Vec<Result<bool>> = par_map(examples.len(), threads, |i| {
        let got = answerer.answer(i, &examples[i])?;
        Ok(normalize_answer(&got) == normalize_answer(&examples[i].answer))
    });
    let mut res = EvalResult::default();
    for (ex, hit) in examples.iter().zip(hits) {
        let hit = usize::from(hit?);
        let acc = res.per_category.entry(ex.category).or_default();
        acc.correct += hit;
        acc.total += 1;
        res.overall.correct += hit;
        res.overall.total += 1;
    }
    Ok(res)
}

/// One evaluated run in a grid report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub position_mode: String,
    pub objective: String,
    pub result: EvalResult,
}

impl ReportRow {
    fn cells(&self) -> Vec<Option<f64>> {
        let mut v: Vec<Option<f64>> = Category::ALL.iter().map(|&c| self.result.accuracy(c)).collect();
        v.push(self.result.overall.value());
        v
    }
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "variant",
    "position_mode",
    "objective",
    "relation_lr",
    "relation_ab",
    "count",
    "existence",
    "overall",
];

fn sorted(rows: &[ReportRow]) -> Vec<&ReportRow> {
    let mut r: Vec<&ReportRow> = rows.iter().collect();
    r.sort_by(|a, b| {
        (&a.objective, &a.position_mode, &a.variant).cmp(&(&b.objective, &b.position_mode, &b.variant))
    });
    r
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

pub fn render_csv(rows: &[ReportRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyResult("no report rows".into()));
    }
    let mut out = REPORT_COLUMNS.join(",") + "\n";
    for r in sorted(rows) {
        let mut cols = vec![r.variant.clone(), r.position_mode.clone(), r.objective.clone()];
        cols.extend(r.cells().into_iter().map(fmt));
        out += &(cols.join(",") + "\n");
    }
    Ok(out)
}

/// Plain-text table; the best value of each score column is wrapped in `**`.
pub fn render_table(rows: &[ReportRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyResult("no report rows".into()));
    }
    let rows = sorted(rows);
    let cells: Vec<Vec<Option<f64>>> = rows.iter().map(|r| r.cells()).collect();
    let best: Vec<Option<f64>> = (0..5)
        .map(|j| cells.iter().filter_map(|c| c[j]).fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x)))))
        .collect();
    let header = ["Model", "Position", "Objective", "Relation L/R", "Relation A/B", "Count", "Existence", "Overall"];
    let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for (r, c) in rows.iter().zip(&cells) {
        let mut line = vec![r.variant.clone(), r.position_mode.clone(), r.objective.clone()];
        for (j, v) in c.iter().enumerate() {
            let s = fmt(*v);
            line.push(if v.is_some() && *v == best[j] { format!("**{s}**") } else { s });
        }
        table.push(line);
    }
    let widths: Vec<usize> = (0..header.len()).map(|j| table.iter().map(|l| l[j].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, line) in table.iter().enumerate() {
        let padded: Vec<String> = line.iter().zip(&widths).map(|(s, &w)| format!("{s:<w$}")).collect();
        out += &format!("| {} |\n", padded.join(" | "));
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out += &format!("|-{}-|\n", rule.join("-|-"));
        }
    }
    out += "\nBold marks the best value in each column.\n";
    Ok(out)
}

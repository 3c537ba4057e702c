//! Generated answers against a separate reading of the question text, and
//! the horizontal-mirror metamorphic relation.

use svlb::benchgen::{make_splits, Category, QAExample, SceneSpec, SplitConfig};
use svlb::parallel::worker_threads;

const EXAMPLES: usize = 10_000;

/// Pixel center `(y, x)` of the object called `color shape`.
fn center(scene: &SceneSpec, color: &str, shape: &str) -> Option<(f64, f64)> {
    let (ch, cw) = (scene.canvas.0 / scene.grid.0, scene.canvas.1 / scene.grid.1);
    scene
        .objects
        .iter()
        .find(|o| o.color.name() == color && o.shape.name() == shape)
        .map(|o| ((o.cell.0 as f64 + 0.5) * ch as f64, (o.cell.1 as f64 + 0.5) * cw as f64))
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.into()
}

fn oracle(scene: &SceneSpec, question: &str) -> Option<String> {
    let w: Vec<&str> = question.trim_end_matches(" ?").split(' ').collect();
    match w.as_slice() {
        ["is", "there", "a", c, s] => Some(yes_no(center(scene, c, s).is_some())),
        ["how", "many", c, "objects", "are", "there"] => {
            Some(scene.objects.iter().filter(|o| o.color.name() == *c).count().to_string())
        }
        ["how", "many", plural, "are", "there"] => {
            let n = scene.objects.iter().filter(|o| format!("{}s", o.shape.name()) == *plural).count();
            Some(n.to_string())
        }
        ["is", "the", c1, s1, rel @ .., "the", c2, s2] => {
            let (a, b) = (center(scene, c1, s1)?, center(scene, c2, s2)?);
            let holds = match rel {
                ["to", "the", "left", "of"] => a.1 < b.1,
                ["to", "the", "right", "of"] => a.1 > b.1,
                ["above"] => a.0 < b.0,
                ["below"] => a.0 > b.0,
                _ => return None,
            };
            Some(yes_no(holds))
        }
        _ => None,
    }
}

fn flipped(a: &str) -> String {
    yes_no(a == "no")
}

fn sample() -> Vec<QAExample> {
    let mut out = Vec::with_capacity(EXAMPLES);
    for (i, (canvas, grid, objects)) in [(256, 4, 6), (64, 4, 9), (96, 3, 5), (128, 8, 9)].into_iter().enumerate() {
        let mut cfg = SplitConfig::new(EXAMPLES / 4, 0, 77 + i as u64);
        cfg.scene.canvas = (canvas, canvas);
        cfg.scene.rows = grid;
        cfg.scene.cols = grid;
        cfg.scene.max_objects = objects;
        out.extend(make_splits(&cfg, worker_threads()).unwrap().train);
    }
    out
}

pub fn run() -> Result<String, String> {
    let examples = sample();
    let mut lr = 0;
    for ex in &examples {
        let want = oracle(&ex.scene, &ex.question).ok_or_else(|| format!("oracle cannot read {:?}", ex.question))?;
        if want != ex.answer {
            return Err(format!("{:?}: generator {} vs oracle {want}", ex.question, ex.answer));
        }
        let mirror = ex.scene.mirrored();
        let (again, _) = ex
            .query
            .derive(&mirror)
            .ok_or_else(|| format!("{:?} unanswerable on the mirror", ex.question))?;
        let expected = if ex.category == Category::RelationLr {
            lr += 1;
            flipped(&ex.answer)
        } else {
            ex.answer.clone()
        };
        if again != expected || oracle(&mirror, &ex.question).as_deref() != Some(expected.as_str()) {
            return Err(format!("{:?}: {} on the mirror, expected {expected}", ex.question, again));
        }
    }
    let n = examples.len();
    if n < EXAMPLES {
        return Err(format!("only {n} examples"));
    }
    Ok(format!(
        "{n} answers match the oracle; {lr} left/right labels flip under mirroring, all others invariant"
    ))
}

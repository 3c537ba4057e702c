//! Synthetic spatial-reasoning scenes: placement, rasterization, question
//! generation, dataset splits and exact-match evaluation.
//!
//! Questions cover left/right and above/below relations, counting by color
//! or shape, and existence. Existence questions are an addition that gives
//! contrastive pretraining negative pairs.

mod data;
mod eval;
mod qa;
mod render;
mod scene;
mod vocab;

pub use data::{
    load_split, make_splits, write_dataset, DatasetManifest, LoadedExample, Record, SplitConfig, Splits,
};
pub use eval::{
    evaluate, Accuracy, Answerer, EmptyAnswerer, EvalResult, FnAnswerer, OracleAnswerer, RandomAnswerer, ReportRow,
    render_csv, render_table,
};
pub use qa::{answer_space, gen_qa, normalize_answer, Category, CountFilter, QAExample, Query, Relation};
pub use render::{covers, decode_ppm, encode_ppm, read_ppm, render, write_ppm, Image, BACKGROUND};
pub use scene::{gen_scene, BBox, Color, Kind, SceneConfig, SceneObject, SceneSpec, Shape};
pub use vocab::{Vocabulary, END_ID, PAD_ID};

/// Declarative description listing every object in reading order,
/// e.g. `a red square at row 0 col 2 and a blue circle at row 1 col 3`.
pub fn caption(scene: &SceneSpec) -> String {
    let mut objs = scene.objects.clone();
    objs.sort_by_key(|o| o.cell);
    objs.iter()
        .map(|o| format!("a {} at row {} col {}", o.kind().phrase(), o.cell.0, o.cell.1))
        .collect::<Vec<_>>()
        .join(" and ")
}

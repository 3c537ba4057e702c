use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use svlb::align::{Vlm, VlmExample};
use svlb::benchgen::{
    evaluate, make_splits, render, Accuracy, Category, FnAnswerer, QAExample, SplitConfig, Splits, Vocabulary,
};
use svlb::encoders::{patchify, DecoderConfig, EncoderConfig, HeadToken, Pooling};
use svlb::parallel::worker_threads;
use svlb::posenc::{PositionKind, PositionMode, DEFAULT_THETA_BASE};
use svlb::{ParamSet, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

pub fn normal(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape, normal_vec(r, shape.iter().product())).unwrap()
}

pub fn dim(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

pub fn vlm_example(ex: &QAExample, patch: usize) -> VlmExample {
    let v = Vocabulary::standard();
    VlmExample {
        grid: patchify(&render(&ex.scene).to_pixels(), patch).unwrap(),
        instruction: v.encode(&ex.question).unwrap(),
        answer: v.encode_answer(&ex.answer).unwrap(),
    }
}

pub fn relation_lr(n_train: usize, n_eval: usize, canvas: usize, seed: u64) -> Splits {
    let mut cfg = SplitConfig::new(n_train, n_eval, seed);
    cfg.scene.canvas = (canvas, canvas);
    cfg.categories = vec![Category::RelationLr];
    make_splits(&cfg, worker_threads()).unwrap()
}

pub fn toy_vlm(depth: usize, d: usize, canvas: usize, patch: usize, kind: PositionKind) -> Vlm {
    let enc = EncoderConfig {
        depth,
        d_model: d,
        heads: 4,
        head_dim: d / 4,
        patch_size: patch,
        image_size: (canvas, canvas),
        position: PositionMode::new(kind, DEFAULT_THETA_BASE).unwrap(),
        head_token: HeadToken::None,
        pooling: Pooling::Mean,
    };
    Vlm::new(enc, DecoderConfig::text_only(Vocabulary::standard().len(), d, 4, depth)).unwrap()
}

/// Exact-match accuracy of greedy answers.
pub fn accuracy(vlm: &Vlm, p: &ParamSet, examples: &[QAExample], patch: usize) -> Accuracy {
    let v = Vocabulary::standard();
    let answerer = FnAnswerer(|_: usize, ex: &QAExample| {
        let e = vlm_example(ex, patch);
        vlm.generate(p, &e.grid, &e.instruction, &v, e.answer.len() + 1)
    });
    evaluate(&answerer, examples, worker_threads()).unwrap().overall
}

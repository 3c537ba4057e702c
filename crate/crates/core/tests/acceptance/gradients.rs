//! Central finite differences against every differentiable operation,
//! 20 random shapes/seeds each.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use svlb::encoders::layers;
use svlb::encoders::{EncoderConfig, HeadToken, Init, MultimodalDecoder, Pooling, VisionEncoder, DecoderConfig};
use svlb::objectives::{aim_loss, clip_loss, siglip2_loss, siglip_loss, ArBatch, ContrastiveBatch, Siglip2Batch, Siglip2Weights};
use svlb::posenc::{apply_rope1d, apply_rope2d, learned_posemb, PositionKind, PositionMode, RotationPlan};
use svlb::tensor::check::{gradcheck, weighted_sum, Tolerance};
use svlb::tensor::{cross_entropy, embedding, IGNORE_INDEX};
use svlb::{ParamSet, Result, Tensor};

use super::util::{dim, normal, rng};

pub const CASES: u64 = 20;

type Forward = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

struct Case {
    inputs: Vec<Tensor>,
    f: Forward,
}

fn case(inputs: Vec<Tensor>, f: impl Fn(&[Tensor]) -> Result<Tensor> + 'static) -> Case {
    Case { inputs, f: Box::new(f) }
}

fn shape(r: &mut ChaCha8Rng, max_rank: usize) -> Vec<usize> {
    let rank = dim(r, 1, max_rank);
    (0..rank).map(|_| dim(r, 1, 4)).collect()
}

/// A second operand for a binary op: same shape, a trailing suffix, or one element.
fn partner(r: &mut ChaCha8Rng, s: &[usize]) -> Vec<usize> {
    match r.random_range(0..3) {
        0 => s.to_vec(),
        1 => s[r.random_range(0..s.len())..].to_vec(),
        _ => vec![1],
    }
}

fn unary(r: &mut ChaCha8Rng, seed: u64, op: fn(&Tensor) -> Tensor) -> Case {
    let s = shape(r, 3);
    case(vec![normal(r, &s)], move |x| weighted_sum(&op(&x[0]), seed))
}

/// `commutes` ops accept the broadcast operand on either side; the rest only on the right.
fn binary(r: &mut ChaCha8Rng, seed: u64, op: fn(&Tensor, &Tensor) -> Result<Tensor>, commutes: bool) -> Case {
    let s = shape(r, 3);
    let t = partner(r, &s);
    let (a, b) = (normal(r, &s), normal(r, &t));
    let (a, b) = if commutes && r.random_bool(0.5) { (b, a) } else { (a, b) };
    case(vec![a, b], move |x| weighted_sum(&op(&x[0], &x[1])?, seed))
}

fn enc_config(r: &mut ChaCha8Rng) -> EncoderConfig {
    let kind = PositionKind::ALL[r.random_range(0..3)];
    let (head_token, pooling) = [
        (HeadToken::None, Pooling::Mean),
        (HeadToken::Cls, Pooling::HeadToken),
        (HeadToken::Map, Pooling::HeadToken),
        (HeadToken::Cls, Pooling::Mean),
    ][r.random_range(0..4)];
    EncoderConfig {
        depth: dim(r, 0, 2),
        d_model: 8,
        heads: 2,
        head_dim: 4,
        patch_size: 1,
        image_size: (dim(r, 1, 3), dim(r, 1, 3)),
        position: PositionMode::new(kind, 100.0).unwrap(),
        head_token,
        pooling,
    }
}

fn build(name: &str, seed: u64) -> Case {
    let mut r = rng(seed.wrapping_mul(7919) ^ name.len() as u64);
    let r = &mut r;
    match name {
        "add" => binary(r, seed, Tensor::add, true),
        "sub" => binary(r, seed, Tensor::sub, false),
        "mul" => binary(r, seed, Tensor::mul, true),
        "scale" => {
            let c = r.random_range(-3.0..3.0);
            let s = shape(r, 3);
            case(vec![normal(r, &s)], move |x| weighted_sum(&x[0].scale(c), seed))
        }
        "neg" => unary(r, seed, Tensor::neg),
        "exp" => unary(r, seed, Tensor::exp),
        "gelu" => unary(r, seed, Tensor::gelu),
        "log_sigmoid" => unary(r, seed, |t| t.scale(3.0).log_sigmoid()),
        "sum" => unary(r, seed, |t| t.sum().scale(0.7)),
        "mean" => unary(r, seed, |t| t.mean().exp()),
        "matmul" => {
            let (m, k, n) = (dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
            case(vec![normal(r, &[m, k]), normal(r, &[k, n])], move |x| {
                weighted_sum(&x[0].matmul(&x[1])?, seed)
            })
        }
        "bmm" => {
            let (b, m, k, n) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
            case(vec![normal(r, &[b, m, k]), normal(r, &[b, k, n])], move |x| {
                weighted_sum(&x[0].bmm(&x[1])?, seed)
            })
        }
        "permute" => {
            let s = shape(r, 4);
            let mut perm: Vec<usize> = (0..s.len()).collect();
            perm.shuffle(r);
            case(vec![normal(r, &s)], move |x| weighted_sum(&x[0].permute(&perm)?, seed))
        }
        "transpose" => {
            let s: Vec<usize> = (0..dim(r, 2, 3)).map(|_| dim(r, 1, 4)).collect();
            let (d0, d1) = (r.random_range(0..s.len()), r.random_range(0..s.len()));
            case(vec![normal(r, &s)], move |x| weighted_sum(&x[0].transpose(d0, d1)?, seed))
        }
        "reshape" => {
            let s = shape(r, 3);
            let n: usize = s.iter().product();
            let to = if r.random_bool(0.5) { vec![n] } else { vec![1, n, 1] };
            case(vec![normal(r, &s)], move |x| weighted_sum(&x[0].reshape(&to)?.exp(), seed))
        }
        "slice" => {
            let s = shape(r, 3);
            let axis = r.random_range(0..s.len());
            let start = r.random_range(0..s[axis]);
            let end = r.random_range(start + 1..=s[axis]);
            case(vec![normal(r, &s)], move |x| weighted_sum(&x[0].slice(axis, start, end)?, seed))
        }
        "concat" => {
            let base = shape(r, 3);
            let axis = r.random_range(0..base.len());
            let parts: Vec<Tensor> = (0..dim(r, 1, 3))
                .map(|_| {
                    let mut s = base.clone();
                    s[axis] = dim(r, 1, 3);
                    normal(r, &s)
                })
                .collect();
            case(parts, move |x| weighted_sum(&Tensor::concat(x, axis)?, seed))
        }
        "softmax" => {
            let s = shape(r, 3);
            let axis = r.random_range(0..s.len());
            case(vec![normal(r, &s)], move |x| weighted_sum(&x[0].softmax(axis)?, seed))
        }
        "layer_norm" => {
            let (n, d) = (dim(r, 1, 4), dim(r, 2, 6));
            case(vec![normal(r, &[n, d]), normal(r, &[d]), normal(r, &[d])], move |x| {
                weighted_sum(&x[0].layer_norm(&x[1], &x[2], 1e-5)?, seed)
            })
        }
        "mse" => {
            let s = shape(r, 3);
            case(vec![normal(r, &s), normal(r, &s)], move |x| x[0].mse(&x[1]))
        }
        "l2_normalize_rows" => {
            let (n, d) = (dim(r, 1, 4), dim(r, 1, 5));
            case(vec![normal(r, &[n, d])], move |x| weighted_sum(&x[0].l2_normalize_rows()?, seed))
        }
        "embedding" => {
            let (v, d, l) = (dim(r, 1, 5), dim(r, 1, 4), dim(r, 1, 6));
            let ids: Vec<usize> = (0..l).map(|_| r.random_range(0..v)).collect();
            case(vec![normal(r, &[v, d])], move |x| weighted_sum(&embedding(&x[0], &ids)?, seed))
        }
        "cross_entropy" => {
            let (b, v) = (dim(r, 1, 5), dim(r, 2, 6));
            let mut targets: Vec<usize> = (0..b).map(|_| r.random_range(0..v)).collect();
            if b > 1 && r.random_bool(0.5) {
                targets[0] = IGNORE_INDEX;
            }
            case(vec![normal(r, &[b, v])], move |x| cross_entropy(&x[0], &targets, IGNORE_INDEX))
        }
        "rope1d" => {
            let (h, l, dh) = (dim(r, 1, 2), dim(r, 1, 6), 2 * dim(r, 1, 3));
            let pos: Vec<usize> = (0..l).map(|_| r.random_range(0..12)).collect();
            let plan = RotationPlan::rope1d(dh, 10.0).unwrap();
            case(vec![normal(r, &[h, l, dh])], move |x| weighted_sum(&apply_rope1d(&x[0], &pos, &plan)?, seed))
        }
        "rope2d" => {
            let (h, hp, wp, dh) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3), 4 * dim(r, 1, 2));
            let plan = RotationPlan::rope2d(dh, 10.0).unwrap();
            case(vec![normal(r, &[h, hp * wp, dh])], move |x| {
                weighted_sum(&apply_rope2d(&x[0], (hp, wp), &plan)?, seed)
            })
        }
        "learned_posemb" => {
            let (l, d) = (dim(r, 1, 4), dim(r, 1, 4));
            let extra = dim(r, 0, 2);
            case(vec![normal(r, &[l, d]), normal(r, &[l + extra, d])], move |x| {
                weighted_sum(&learned_posemb(&x[0], &x[1])?, seed)
            })
        }
        "attention" => {
            let (lq, lk, d) = (dim(r, 1, 4), dim(r, 1, 4), 4);
            let mut p = ParamSet::new();
            Init::new(seed).attention(&mut p, "a", d).unwrap();
            case(vec![normal(r, &[lq, d]), normal(r, &[lk, d])], move |x| {
                weighted_sum(&layers::attention(&x[0], &x[1], &p.scope("a."), 2, None, None)?, seed)
            })
        }
        "transformer_block" => {
            let (l, d) = (dim(r, 1, 4), 4);
            let mut p = ParamSet::new();
            Init::new(seed).block(&mut p, "b", d).unwrap();
            let positions = svlb::posenc::TokenPositions::flat(l);
            let plan = RotationPlan::rope1d(2, 10.0).unwrap();
            let causal = r.random_bool(0.5);
            case(vec![normal(r, &[l, d])], move |x| {
                let mask = causal.then(|| layers::causal_mask(l));
                let y = layers::block(&x[0], &p.scope("b."), 2, Some((&plan, &positions)), mask.as_ref())?;
                weighted_sum(&y, seed)
            })
        }
        "vision_encoder" => {
            let cfg = enc_config(r);
            let enc = VisionEncoder::new(cfg.clone()).unwrap();
            let mut p = ParamSet::new();
            enc.init(&mut Init::new(seed), &mut p, "").unwrap();
            let pooled = r.random_bool(0.5);
            case(vec![normal(r, &[cfg.num_patches(), cfg.patch_dim()])], move |x| {
                let out = enc.encode_tokens(&p.scope(""), &x[0])?;
                weighted_sum(if pooled { &out.pooled } else { &out.seq_features }, seed)
            })
        }
        "decoder" => {
            let l = dim(r, 1, 5);
            let dec = MultimodalDecoder::new(DecoderConfig::text_only(7, 8, 2, dim(r, 1, 2))).unwrap();
            let mut p = ParamSet::new();
            dec.init(&mut Init::new(seed), &mut p, "").unwrap();
            case(vec![normal(r, &[l, 8])], move |x| weighted_sum(&dec.hidden(&p.scope(""), &x[0])?, seed))
        }
        "clip_loss" | "siglip_loss" => {
            let (n, d) = (dim(r, 1, 4), dim(r, 2, 5));
            let sig = name == "siglip_loss";
            let tau = if sig { 0.5 } else { 0.2 };
            let bias = r.random_range(-2.0..0.0);
            case(
                vec![normal(r, &[n, d]), normal(r, &[n, d]), Tensor::scalar(f64::ln(tau)), Tensor::scalar(bias)],
                move |x| {
                    let b = ContrastiveBatch {
                        img_emb: x[0].clone(),
                        txt_emb: x[1].clone(),
                        log_temperature: x[2].clone(),
                        bias: x[3].clone(),
                    };
                    if sig {
                        siglip_loss(&b)
                    } else {
                        clip_loss(&b)
                    }
                },
            )
        }
        "aim_loss" => {
            let (lv, pd, lt, v) = (dim(r, 1, 4), dim(r, 1, 3), dim(r, 1, 3), dim(r, 2, 5));
            let prefix = r.random_range(0..=lv);
            let targets: Vec<usize> = (0..lt).map(|_| r.random_range(0..v)).collect();
            let pixel_weight = r.random_range(0.1..2.0);
            let patch_targets = normal(r, &[lv, pd]);
            case(vec![normal(r, &[lv, pd]), normal(r, &[lt, v])], move |x| {
                aim_loss(&ArBatch {
                    patch_preds: x[0].clone(),
                    patch_targets: patch_targets.clone(),
                    text_logits: x[1].clone(),
                    text_targets: targets.clone(),
                    prefix_len: prefix,
                    pixel_weight,
                })
            })
        }
        "siglip2_loss" => {
            let (n, d, m, lt, v) = (dim(r, 1, 3), dim(r, 2, 4), dim(r, 1, 4), dim(r, 1, 3), dim(r, 2, 5));
            let targets: Vec<usize> = (0..lt).map(|_| r.random_range(0..v)).collect();
            let weights = Siglip2Weights {
                sig: r.random_range(0.5..1.5),
                distill: r.random_range(0.0..1.0),
                masked: r.random_range(0.0..1.0),
                ar: r.random_range(0.0..1.0),
            };
            let inputs = vec![
                normal(r, &[n, d]),
                normal(r, &[n, d]),
                Tensor::scalar(f64::ln(0.5)),
                Tensor::scalar(-1.0),
                normal(r, &[m, d]),
                normal(r, &[m, 3]),
                normal(r, &[lt, v]),
            ];
            // teacher features and masked targets are detached inside the loss
            let (teacher, masked_targets) = (normal(r, &[m, d]), normal(r, &[m, 3]));
            case(inputs, move |x| {
                siglip2_loss(&Siglip2Batch {
                    contrastive: ContrastiveBatch {
                        img_emb: x[0].clone(),
                        txt_emb: x[1].clone(),
                        log_temperature: x[2].clone(),
                        bias: x[3].clone(),
                    },
                    student_feats: x[4].clone(),
                    teacher_feats: teacher.clone(),
                    masked_preds: x[5].clone(),
                    masked_targets: masked_targets.clone(),
                    text_logits: Some(x[6].clone()),
                    text_targets: targets.clone(),
                    weights,
                })
            })
        }
        other => panic!("no gradient case for {other}"),
    }
}

pub const OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "exp",
    "gelu",
    "log_sigmoid",
    "sum",
    "mean",
    "matmul",
    "bmm",
    "permute",
    "transpose",
    "reshape",
    "slice",
    "concat",
    "softmax",
    "layer_norm",
    "mse",
    "l2_normalize_rows",
    "embedding",
    "cross_entropy",
    "rope1d",
    "rope2d",
    "learned_posemb",
    "attention",
    "transformer_block",
    "vision_encoder",
    "decoder",
    "clip_loss",
    "siglip_loss",
    "aim_loss",
    "siglip2_loss",
];

/// Runs the whole suite; returns a summary or the first failures.
pub fn run() -> std::result::Result<String, String> {
    let tol = Tolerance::default();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for op in OPS {
        for seed in 0..CASES {
            let c = build(op, seed);
            let report = gradcheck(&c.f, &c.inputs, tol).map_err(|e| format!("{op} seed {seed}: {e}"))?;
            checked += report.checked;
            worst = worst.max(report.max_rel_err);
            if !report.passed() {
                failures.push(format!("{op} seed {seed}: {}", report.failures[0]));
            }
        }
    }
    if failures.is_empty() {
        Ok(format!(
            "{} ops x {CASES} cases, {checked} elements, max rel err {worst:.2e}",
            OPS.len()
        ))
    } else {
        Err(format!("{} failing cases, first: {}", failures.len(), failures[0]))
    }
}

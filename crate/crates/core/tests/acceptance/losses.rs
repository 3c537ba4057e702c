//! The four pretraining losses against plain scalar loops.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use svlb::objectives::{aim_loss, clip_loss, siglip2_loss, siglip_loss, ArBatch, ContrastiveBatch, Siglip2Batch, Siglip2Weights};
use svlb::tensor::IGNORE_INDEX;
use svlb::Tensor;

use super::util::{dim, normal_vec, rng};

const BATCHES: u64 = 100;
const TOL: f64 = 1e-10;

type Mat = Vec<Vec<f64>>;

fn mat(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    (0..rows).map(|_| normal_vec(r, cols)).collect()
}

fn tensor(m: &Mat) -> Tensor {
    let cols = m[0].len();
    Tensor::new(&[m.len(), cols], m.concat()).unwrap()
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn cosine_logits(a: &Mat, b: &Mat, tau: f64) -> Mat {
    let norm = |v: &Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    a.iter()
        .map(|x| {
            b.iter()
                .map(|y| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / (norm(x) * norm(y) * tau))
                .collect()
        })
        .collect()
}

fn ce(logits: &Mat, targets: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for (row, &t) in logits.iter().zip(targets) {
        if t != IGNORE_INDEX {
            total += log_sum_exp(row) - row[t];
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            s += (p - q) * (p - q);
            n += 1;
        }
    }
    s / n as f64
}

fn clip_oracle(a: &Mat, b: &Mat, tau: f64) -> f64 {
    let l = cosine_logits(a, b, tau);
    let n = l.len();
    let mut rows = 0.0;
    let mut cols = 0.0;
    for i in 0..n {
        rows += log_sum_exp(&l[i]) - l[i][i];
        let col: Vec<f64> = (0..n).map(|j| l[j][i]).collect();
        cols += log_sum_exp(&col) - l[i][i];
    }
    0.5 * (rows + cols) / n as f64
}

fn siglip_oracle(a: &Mat, b: &Mat, tau: f64, bias: f64) -> f64 {
    let l = cosine_logits(a, b, tau);
    let n = l.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let z = if i == j { 1.0 } else { -1.0 };
            s += log_sigmoid(z * (l[i][j] + bias));
        }
    }
    -s / n as f64
}

struct Pair {
    a: Mat,
    b: Mat,
    tau: f64,
    bias: f64,
}

fn pair(r: &mut ChaCha8Rng) -> Pair {
    let (n, d) = (dim(r, 1, 8), dim(r, 2, 8));
    Pair {
        a: mat(r, n, d),
        b: mat(r, n, d),
        tau: r.random_range(0.03..1.0),
        bias: r.random_range(-12.0..2.0),
    }
}

fn contrastive(p: &Pair) -> ContrastiveBatch {
    ContrastiveBatch::fixed(tensor(&p.a), tensor(&p.b), p.tau, p.bias).unwrap()
}

fn targets(r: &mut ChaCha8Rng, n: usize, v: usize) -> Vec<usize> {
    (0..n)
        .map(|_| if r.random_bool(0.15) { IGNORE_INDEX } else { r.random_range(0..v) })
        .collect()
}

fn worst(f: impl Fn(&mut ChaCha8Rng) -> (f64, f64), seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..BATCHES)
        .map(|_| {
            let (got, want) = f(&mut r);
            (got - want).abs() / want.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

pub fn run() -> Result<String, String> {
    let clip = worst(
        |r| {
            let p = pair(r);
            (clip_loss(&contrastive(&p)).unwrap().item(), clip_oracle(&p.a, &p.b, p.tau))
        },
        1,
    );
    let sig = worst(
        |r| {
            let p = pair(r);
            (siglip_loss(&contrastive(&p)).unwrap().item(), siglip_oracle(&p.a, &p.b, p.tau, p.bias))
        },
        2,
    );
    let aim = worst(
        |r| {
            let (lv, pd, lt, v) = (dim(r, 1, 9), dim(r, 1, 6), dim(r, 1, 6), dim(r, 2, 12));
            let prefix = r.random_range(0..=lv);
            let (pred, target, logits) = (mat(r, lv, pd), mat(r, lv, pd), mat(r, lt, v));
            let tg = targets(r, lt, v);
            let w = r.random_range(0.0..3.0);
            let got = aim_loss(&ArBatch {
                patch_preds: tensor(&pred),
                patch_targets: tensor(&target),
                text_logits: tensor(&logits),
                text_targets: tg.clone(),
                prefix_len: prefix,
                pixel_weight: w,
            })
            .unwrap()
            .item();
            let px = if prefix == lv { 0.0 } else { w * mse(&pred[prefix..], &target[prefix..]) };
            (got, px + ce(&logits, &tg))
        },
        3,
    );
    let sig2 = worst(
        |r| {
            let p = pair(r);
            let (m, d, k) = (dim(r, 1, 6), dim(r, 1, 6), dim(r, 1, 6));
            let (student, teacher, mp, mt) = (mat(r, m, d), mat(r, m, d), mat(r, m, k), mat(r, m, k));
            let with_text = r.random_bool(0.8);
            let (lt, v) = (dim(r, 1, 5), dim(r, 2, 10));
            let logits = mat(r, lt, v);
            let tg = targets(r, lt, v);
            let mut weight = || if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0..2.0) };
            let w = Siglip2Weights {
                sig: weight(),
                distill: weight(),
                masked: weight(),
                ar: weight(),
            };
            let got = siglip2_loss(&Siglip2Batch {
                contrastive: contrastive(&p),
                student_feats: tensor(&student),
                teacher_feats: tensor(&teacher),
                masked_preds: tensor(&mp),
                masked_targets: tensor(&mt),
                text_logits: with_text.then(|| tensor(&logits)),
                text_targets: tg.clone(),
                weights: w,
            })
            .unwrap()
            .item();
            let text = if with_text { ce(&logits, &tg) } else { 0.0 };
            let want = w.sig * siglip_oracle(&p.a, &p.b, p.tau, p.bias)
                + w.distill * mse(&student, &teacher)
                + w.masked * mse(&mp, &mt)
                + w.ar * text;
            (got, want)
        },
        4,
    );
    let detail = format!(
        "{BATCHES} batches each; max rel err clip {clip:.1e}, siglip {sig:.1e}, aim {aim:.1e}, siglip2 {sig2:.1e}"
    );
    if [clip, sig, aim, sig2].iter().all(|e| *e <= TOL) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

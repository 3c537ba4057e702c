//! Relative-position property of 2D-RoPE, exhaustive over a 4x4 grid.

use std::collections::HashMap;

use svlb::posenc::{apply_rope2d, RotationPlan};
use svlb::Tensor;

use super::util::{normal_vec, rng};

const SIDE: usize = 4;
const HEAD_DIM: usize = 8;
const BASE: f64 = 10_000.0;
const TOL: f64 = 1e-10;

/// `<R(a) q, R(b) k>` for one rotated pair is `q^T R(b - a) k`.
fn closed_form(q: &[f64], k: &[f64], dh: isize, dw: isize) -> f64 {
    let quarter = HEAD_DIM / 4;
    let mut acc = 0.0;
    for pair in 0..HEAD_DIM / 2 {
        let (j, delta) = if pair < quarter { (pair, dh) } else { (pair - quarter, dw) };
        let theta = BASE.powf(-(4.0 * j as f64) / HEAD_DIM as f64);
        let phi = delta as f64 * theta;
        let (q0, q1, k0, k1) = (q[2 * pair], q[2 * pair + 1], k[2 * pair], k[2 * pair + 1]);
        acc += (q0 * k0 + q1 * k1) * phi.cos() + (q1 * k0 - q0 * k1) * phi.sin();
    }
    acc
}

fn rotate_everywhere(v: &[f64], plan: &RotationPlan) -> Vec<Vec<f64>> {
    let n = SIDE * SIDE;
    let tiled: Vec<f64> = (0..n).flat_map(|_| v.iter().copied()).collect();
    let x = Tensor::new(&[n, HEAD_DIM], tiled).unwrap();
    let y = apply_rope2d(&x, (SIDE, SIDE), plan).unwrap();
    y.data().chunks(HEAD_DIM).map(|c| c.to_vec()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn run() -> Result<String, String> {
    let plan = RotationPlan::rope2d(HEAD_DIM, BASE).map_err(|e| e.to_string())?;
    let mut r = rng(42);
    let n = SIDE * SIDE;
    let mut pairs = 0;
    let (mut worst_rel, mut worst_formula, mut worst_norm): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..4 {
        let q = normal_vec(&mut r, HEAD_DIM);
        let k = normal_vec(&mut r, HEAD_DIM);
        let fq = rotate_everywhere(&q, &plan);
        let fk = rotate_everywhere(&k, &plan);
        let (nq, nk) = (dot(&q, &q).sqrt(), dot(&k, &k).sqrt());
        for i in 0..n {
            worst_norm = worst_norm.max((dot(&fq[i], &fq[i]).sqrt() - nq).abs());
            worst_norm = worst_norm.max((dot(&fk[i], &fk[i]).sqrt() - nk).abs());
        }
        let mut canonical: HashMap<(isize, isize), f64> = HashMap::new();
        for a in 0..n {
            for b in 0..n {
                let d = (
                    (b / SIDE) as isize - (a / SIDE) as isize,
                    (b % SIDE) as isize - (a % SIDE) as isize,
                );
                let s = dot(&fq[a], &fk[b]);
                let first = *canonical.entry(d).or_insert(s);
                worst_rel = worst_rel.max((s - first).abs());
                worst_formula = worst_formula.max((s - closed_form(&q, &k, d.0, d.1)).abs());
                pairs += 1;
            }
        }
    }
    let detail = format!(
        "{pairs} pairs, shared-offset spread {worst_rel:.1e}, closed-form err {worst_formula:.1e}, norm err {worst_norm:.1e}"
    );
    if worst_rel <= TOL && worst_formula <= TOL && worst_norm <= TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

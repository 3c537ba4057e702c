//! Perturbation Jacobian of the multimodal decoder against its causal mask.

use svlb::encoders::{DecoderConfig, Init, MultimodalDecoder};
use svlb::{ParamSet, Tensor};

use super::util::{normal, rng};

const LV: usize = 4;
const LT: usize = 3;
const D: usize = 16;

/// Rows of `[patch_preds; text_logits]`, one per output position.
fn outputs(dec: &MultimodalDecoder, p: &ParamSet, seq: &Tensor) -> Vec<Vec<f64>> {
    let visual = seq.slice(0, 0, LV).unwrap();
    let text = seq.slice(0, LV, LV + LT).unwrap();
    let out = dec.decode_embedded(&p.scope(""), &visual, Some(&text)).unwrap();
    let rows = |t: &Tensor| t.data().chunks(t.shape()[1]).map(|c| c.to_vec()).collect::<Vec<_>>();
    let mut all = rows(&out.patch_preds.unwrap());
    all.extend(rows(&out.text_logits.unwrap()));
    all
}

pub fn run() -> Result<String, String> {
    let mut checked = 0;
    for seed in 0..6u64 {
        let cfg = DecoderConfig {
            patch_dim: Some(12),
            ..DecoderConfig::text_only(11, D, 2, 1 + seed as usize % 2)
        };
        let dec = MultimodalDecoder::new(cfg).map_err(|e| e.to_string())?;
        let mut p = ParamSet::new();
        dec.init(&mut Init::new(seed), &mut p, "").map_err(|e| e.to_string())?;
        let mut r = rng(100 + seed);
        let seq = normal(&mut r, &[LV + LT, D]);
        let base = outputs(&dec, &p, &seq);
        for e in 0..LV + LT {
            let mut bumped = seq.to_vec();
            for (k, v) in bumped[e * D..(e + 1) * D].iter_mut().enumerate() {
                *v += 0.5 + 0.1 * k as f64;
            }
            let moved = outputs(&dec, &p, &Tensor::new(&[LV + LT, D], bumped).unwrap());
            for o in 0..LV + LT {
                let change = base[o].iter().zip(&moved[o]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let depends = change != 0.0;
                if depends != (e < o) {
                    return Err(format!(
                        "seed {seed}: output {o} {} element {e} (max change {change:.2e})",
                        if depends { "depends on" } else { "ignores" }
                    ));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (element, output) entries match the mask over {LV} patches + {LT} tokens"))
}

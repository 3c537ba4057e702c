//! Projection pretraining leaves the encoder and language model untouched.

use svlb::align::{vlm_step, TrainStageConfig, PROJECTION_PREFIX};
use svlb::posenc::PositionKind;
use svlb::tensor::{AdamWConfig, OptimizerState};
use svlb::ParamSet;

use super::util::{relation_lr, toy_vlm, vlm_example};

const STEPS: usize = 10;

fn bits(p: &ParamSet) -> Vec<(String, Vec<u64>)> {
    p.iter()
        .map(|(n, t)| (n.to_string(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

pub fn run() -> Result<String, String> {
    let vlm = toy_vlm(1, 32, 32, 8, PositionKind::Rope2d);
    let data = relation_lr(16, 0, 32, 3);
    let examples: Vec<_> = data.train.iter().map(|e| vlm_example(e, 8)).collect();
    let mut p = vlm.init(5).map_err(|e| e.to_string())?;
    let before = bits(&p);
    let stage = TrainStageConfig::projection_pretrain(1e-3, 4, STEPS);
    stage.validate().map_err(|e| e.to_string())?;
    stage.apply(&mut p);
    let mut opt = OptimizerState::new(&p, AdamWConfig::default());
    for step in 0..STEPS {
        let batch: Vec<_> = (0..4).map(|j| examples[(step * 4 + j) % examples.len()].clone()).collect();
        vlm_step(&vlm, &mut p, &mut opt, &stage, &batch).map_err(|e| e.to_string())?;
    }
    let (mut frozen, mut moved) = (0, 0);
    for ((name, old), (_, new)) in before.iter().zip(bits(&p)) {
        if name.starts_with(PROJECTION_PREFIX) {
            if &new == old {
                return Err(format!("{name} did not move"));
            }
            moved += 1;
        } else if &new != old {
            return Err(format!("{name} changed during projection pretraining"));
        } else {
            frozen += 1;
        }
    }
    Ok(format!("{frozen} tensors bit-identical after {STEPS} steps, {moved} projection tensors updated"))
}

//! A depth-2, width-64 model memorizes 32 left/right questions.

use svlb::align::{vlm_step, TrainStageConfig};
use svlb::benchgen::{evaluate, Category, RandomAnswerer};
use svlb::parallel::worker_threads;
use svlb::posenc::PositionKind;
use svlb::pretrain::EpochSampler;
use svlb::tensor::{AdamWConfig, OptimizerState};

use super::util::{accuracy, relation_lr, toy_vlm, vlm_example};

const TRAIN: usize = 32;
const HELD_OUT: usize = 2000;
const MAX_STEPS: usize = 500;
const BATCH: usize = 8;
const CANVAS: usize = 64;
const PATCH: usize = 16;

pub fn run() -> Result<String, String> {
    let data = relation_lr(TRAIN, HELD_OUT, CANVAS, 1);
    if data.eval.iter().any(|e| e.category != Category::RelationLr) {
        return Err("held-out set has other categories".into());
    }
    let guesser = RandomAnswerer {
        seed: 9,
        max_objects: 6,
    };
    let baseline = evaluate(&guesser, &data.eval, worker_threads())
        .map_err(|e| e.to_string())?
        .overall;
    let base = baseline.value().unwrap_or(0.0);
    let yes = data.eval.iter().filter(|e| e.answer == "yes").count() as f64 / HELD_OUT as f64;
    if (base - 0.5).abs() > 0.05 {
        return Err(format!("random baseline {base:.3} outside 0.5 +- 0.05"));
    }

    let vlm = toy_vlm(2, 64, CANVAS, PATCH, PositionKind::Rope2d);
    let examples: Vec<_> = data.train.iter().map(|e| vlm_example(e, PATCH)).collect();
    let mut p = vlm.init(0).map_err(|e| e.to_string())?;
    let untrained = accuracy(&vlm, &p, &data.train, PATCH);
    let stage = TrainStageConfig::full_finetune(1e-3, BATCH, MAX_STEPS);
    stage.apply(&mut p);
    let mut opt = OptimizerState::new(&p, AdamWConfig::default());
    let mut sampler = EpochSampler::new(0);
    let mut last = untrained;
    for step in 0..MAX_STEPS {
        let batch: Vec<_> = sampler.batch(step, BATCH, TRAIN).into_iter().map(|i| examples[i].clone()).collect();
        vlm_step(&vlm, &mut p, &mut opt, &stage, &batch).map_err(|e| e.to_string())?;
        if (step + 1) % 25 == 0 {
            last = accuracy(&vlm, &p, &data.train, PATCH);
            if last.correct == TRAIN {
                return Ok(format!(
                    "{TRAIN}/{TRAIN} exact match after {} steps (untrained {}/{TRAIN}); random baseline {base:.3} on {HELD_OUT} held-out (yes rate {yes:.3})",
                    step + 1,
                    untrained.correct
                ));
            }
        }
    }
    Err(format!("{}/{TRAIN} after {MAX_STEPS} steps", last.correct))
}

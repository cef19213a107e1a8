//! Train the desk-scale patch classifier on labeled windows cut from
//! synthetic scenes, using the two-stage schedule (a fast stage, then a
//! fine-tuning stage at a lower rate), and report held-out accuracy.
//!
//! Run with: cargo run --example train_patch_classifier

use waterline::net::{build_wldetectnet, count_params, DetectNetSpec, ParamNet};
use waterline::synth::{synth_patch_dataset, synth_scene, BoundaryModel, SceneParams};
use waterline::train::{accuracy, train_two_stage, TrainSchedule, TrainStage};

fn main() -> waterline::Result<()> {
    let spec = DetectNetSpec::desk();
    let (r, s) = (16, 8);

    let scene = |boundary, seed| {
        synth_scene(&SceneParams {
            boundary,
            ripple: 5.0,
            speckle: 4.0,
            noise: 2.0,
            seed,
            ..SceneParams::default()
        })
    };
    let train_scene = scene(BoundaryModel::Sloped { y0: 55.0, slope: 0.08 }, 1)?;
    let held_out_scene = scene(
        BoundaryModel::Sinusoidal { mean: 64.0, amplitude: 10.0, period: 80.0, phase: 1.3 },
        2,
    )?;

    let stage1 = synth_patch_dataset(&train_scene, 45, 45, r, s, spec.input_size, 10)?;
    let stage2 = synth_patch_dataset(&train_scene, 45, 45, r, s, spec.input_size, 11)?;
    let held_out = synth_patch_dataset(&held_out_scene, 30, 30, r, s, spec.input_size, 12)?;

    let mut net = build_wldetectnet(&spec, 11)?;
    println!(
        "desk classifier: {} parameters, initial held-out accuracy {:.3}",
        count_params(&net as &dyn ParamNet),
        accuracy(&net, &held_out)?
    );

    let schedule = TrainSchedule {
        batch_size: 60,
        stages: vec![
            TrainStage { epochs: 8, learning_rate: 1e-5, seed: 100 },
            TrainStage { epochs: 4, learning_rate: 2e-6, seed: 101 },
        ],
        grad_clip: None,
    };
    let result = train_two_stage(&mut net, &schedule, &stage1, &stage2)?;
    for rec in &result.history {
        println!(
            "stage {} epoch {:>2}  mean loss {:.4}  train accuracy {:.3}",
            rec.stage, rec.epoch, rec.mean_loss, rec.accuracy
        );
    }
    if let Some(reason) = result.aborted {
        println!("training aborted: {reason}");
        return Ok(());
    }
    println!("final held-out accuracy {:.3}", accuracy(&net, &held_out)?);
    Ok(())
}

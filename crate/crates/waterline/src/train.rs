//! Desk-scale learning: cross-entropy SGD for the detection classifier with a
//! two-stage data curriculum, and alternating adversarial training of the
//! generator/discriminator pair with D-filtered sample emission.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{DetectNet, DiscriminatorNet, GeneratorNet, ParamNet};
use crate::synth::LabeledPatch;
use crate::tensor::Tensor;

/// Probabilities are clamped this far from {0,1} before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

fn clamp_prob(f: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::Numeric(format!("model output {f} outside [0,1]")));
    }
    Ok(f.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP))
}

/// Summed binary cross-entropy over a batch of waterline probabilities.
pub fn energy(outputs: &[f64], labels: &[u8]) -> Result<f64> {
    if outputs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} outputs vs {} labels",
            outputs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (&f, &y) in outputs.iter().zip(labels) {
        let f = clamp_prob(f)?;
        total -= if y == 1 { f.ln() } else { (1.0 - f).ln() };
    }
    Ok(total)
}

/// One SGD step over a batch: theta <- theta - lr * grad(batch energy).
/// Returns the pre-step batch loss. A non-finite gradient aborts the step
/// with the network unchanged.
pub fn sgd_step(net: &mut DetectNet, batch: &[LabeledPatch], lr: f64) -> Result<f64> {
    sgd_step_clipped(net, batch, lr, None)
}

/// As [`sgd_step`], with an optional global L2 gradient-norm clip
/// (off by default everywhere; exposed as a schedule knob).
pub fn sgd_step_clipped(
    net: &mut DetectNet,
    batch: &[LabeledPatch],
    lr: f64,
    grad_clip: Option<f64>,
) -> Result<f64> {
    if lr < 0.0 {
        return Err(Error::invalid("learning rate must be >= 0".to_string()));
    }
    if batch.is_empty() {
        return Err(Error::invalid("empty batch".to_string()));
    }
    let mut loss = 0.0;
    let mut acc: Option<Vec<Tensor>> = None;
    for sample in batch {
        let (probs, tape) = net.forward_tape(&sample.patch)?;
        let f = probs.data()[sample.label as usize];
        loss += energy(&[f], &[1])?;
        // fused softmax + cross-entropy gradient: probs - onehot(label);
        // stays O(1) even when the softmax saturates
        let mut d_logits = probs.clone();
        d_logits.data_mut()[sample.label as usize] -= 1.0;
        let (grads, _) = net.backward_logits(&tape, &d_logits)?;
        match &mut acc {
            None => acc = Some(grads),
            Some(acc) => {
                // fixed reduction order keeps training bit-reproducible
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.axpy(1.0, g)?;
                }
            }
        }
    }
    let mut grads = acc.expect("non-empty batch");
    let mut sq_norm = 0.0;
    for g in &grads {
        if !g.is_finite() {
            return Err(Error::Numeric(
                "non-finite gradient; step aborted, parameters unchanged".to_string(),
            ));
        }
        sq_norm += g.data().iter().map(|v| v * v).sum::<f64>();
    }
    if let Some(clip) = grad_clip {
        let norm = sq_norm.sqrt();
        if norm > clip {
            let scale = clip / norm;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
        }
    }
    for ((_, param), grad) in net.named_params_mut().into_iter().zip(&grads) {
        param.axpy(-lr, grad)?;
    }
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct TrainStage {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub stages: Vec<TrainStage>,
    pub grad_clip: Option<f64>,
}

impl TrainSchedule {
    /// Desk-scale default: two stages of 10 epochs, batch 60, no clipping.
    /// The rates are small because the batch energy is summed, not averaged.
    pub fn desk(seed: u64) -> Self {
        TrainSchedule {
            batch_size: 60,
            stages: vec![
                TrainStage {
                    epochs: 10,
                    learning_rate: 1e-5,
                    seed,
                },
                TrainStage {
                    epochs: 10,
                    learning_rate: 2e-6,
                    seed: seed.wrapping_add(1),
                },
            ],
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive".to_string()));
        }
        for s in &self.stages {
            if s.learning_rate <= 0.0 {
                return Err(Error::invalid("learning rate must be positive".to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug)]
pub struct TrainResult {
    pub history: Vec<EpochRecord>,
    /// Set when a stage aborted; the history up to the abort is kept.
    pub aborted: Option<String>,
}

/// Fraction of patches whose thresholded waterline probability matches the label.
pub fn accuracy(net: &DetectNet, data: &[LabeledPatch]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empty evaluation set".to_string()));
    }
    let mut hits = 0usize;
    for sample in data {
        let f = net.waterline_prob(&sample.patch)?;
        let predicted = u8::from(f >= 0.5);
        hits += usize::from(predicted == sample.label);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Run the staged schedule: stage i trains on `stage_data[i]` with seeded
/// per-epoch shuffling. Deterministic given seeds.
pub fn train_stages(
    net: &mut DetectNet,
    schedule: &TrainSchedule,
    stage_data: &[&[LabeledPatch]],
) -> Result<TrainResult> {
    schedule.validate()?;
    if stage_data.len() != schedule.stages.len() {
        return Err(Error::invalid(format!(
            "{} stages but {} datasets",
            schedule.stages.len(),
            stage_data.len()
        )));
    }
    let mut history = Vec::new();
    for (stage_idx, (stage, data)) in schedule.stages.iter().zip(stage_data).enumerate() {
        if stage.epochs > 0 && data.is_empty() {
            return Err(Error::invalid(format!("stage {stage_idx} has no data")));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 0..stage.epochs {
            let mut rng =
                ChaCha8Rng::seed_from_u64(stage.seed.wrapping_add(epoch as u64).wrapping_mul(0x9E3779B97F4A7C15));
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(schedule.batch_size) {
                let batch: Vec<LabeledPatch> = chunk.iter().map(|&i| data[i].clone()).collect();
                match sgd_step_clipped(net, &batch, stage.learning_rate, schedule.grad_clip) {
                    Ok(loss) => epoch_loss += loss,
                    Err(e) => {
                        return Ok(TrainResult {
                            history,
                            aborted: Some(format!("stage {stage_idx} epoch {epoch}: {e}")),
                        })
                    }
                }
            }
            let acc = match accuracy(net, data) {
                Ok(a) => a,
                Err(e) => {
                    return Ok(TrainResult {
                        history,
                        aborted: Some(format!("stage {stage_idx} epoch {epoch}: {e}")),
                    })
                }
            };
            history.push(EpochRecord {
                stage: stage_idx,
                epoch,
                mean_loss: epoch_loss / data.len() as f64,
                accuracy: acc,
            });
        }
    }
    Ok(TrainResult {
        history,
        aborted: None,
    })
}

/// Two-stage convenience wrapper matching the staged curriculum.
pub fn train_two_stage(
    net: &mut DetectNet,
    schedule: &TrainSchedule,
    stage1: &[LabeledPatch],
    stage2: &[LabeledPatch],
) -> Result<TrainResult> {
    train_stages(net, schedule, &[stage1, stage2])
}

// ---------------------------------------------------------------------------
// Adversarial training
// ---------------------------------------------------------------------------

/// Two-player objective value: mean log D(x) + mean log(1 - D(G(z))).
pub fn gan_value(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::invalid("gan_value needs non-empty batches".to_string()));
    }
    let mut real = 0.0;
    for &p in d_real {
        real += clamp_prob(p)?.ln();
    }
    let mut fake = 0.0;
    for &p in d_fake {
        fake += (1.0 - clamp_prob(p)?).ln();
    }
    Ok(real / d_real.len() as f64 + fake / d_fake.len() as f64)
}

/// One discriminator ascent step on the two-player objective, then one
/// generator descent step on the non-saturating surrogate -mean log D(G(z)).
/// Non-finite gradients abort with both networks unchanged.
pub fn gan_alternating_step(
    generator: &mut GeneratorNet,
    discriminator: &mut DiscriminatorNet,
    real_batch: &[Tensor],
    noise_batch: &[Tensor],
    lr_g: f64,
    lr_d: f64,
) -> Result<()> {
    if lr_g < 0.0 || lr_d < 0.0 {
        return Err(Error::invalid("learning rates must be >= 0".to_string()));
    }
    if real_batch.is_empty() || noise_batch.is_empty() {
        return Err(Error::invalid("empty adversarial batch".to_string()));
    }

    // Discriminator ascent on mean log D(x) + mean log(1 - D(G(z))).
    let n = real_batch.len() as f64;
    let m = noise_batch.len() as f64;
    let mut d_grads: Option<Vec<Tensor>> = None;
    let push = |acc: &mut Option<Vec<Tensor>>, grads: Vec<Tensor>| -> Result<()> {
        match acc {
            None => *acc = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.axpy(1.0, g)?;
                }
            }
        }
        Ok(())
    };
    for x in real_batch {
        let tape = discriminator.forward_tape(x)?;
        let p = clamp_prob(tape.prob)?;
        let (grads, _) = discriminator.backward(&tape, 1.0 / (n * p))?;
        push(&mut d_grads, grads)?;
    }
    let fakes: Vec<Tensor> = noise_batch
        .iter()
        .map(|z| generator.forward(z))
        .collect::<Result<_>>()?;
    for img in &fakes {
        let tape = discriminator.forward_tape(img)?;
        let p = clamp_prob(tape.prob)?;
        let (grads, _) = discriminator.backward(&tape, -1.0 / (m * (1.0 - p)))?;
        push(&mut d_grads, grads)?;
    }
    let d_grads = d_grads.expect("non-empty batches");
    if d_grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite discriminator gradient; step aborted".to_string()));
    }

    // Generator descent on -mean log D(G(z)) against the pre-update D? No:
    // the conventional alternating scheme updates D first, then G sees the
    // updated D. Apply the D update now.
    for ((_, param), grad) in discriminator.named_params_mut().into_iter().zip(&d_grads) {
        param.axpy(lr_d, grad)?; // ascent
    }

    let mut g_grads: Option<Vec<Tensor>> = None;
    for z in noise_batch {
        let (image, g_tape) = generator.forward_tape(z)?;
        let d_tape = discriminator.forward_tape(&image)?;
        let p = clamp_prob(d_tape.prob)?;
        let (_, d_image) = discriminator.backward(&d_tape, -1.0 / (m * p))?;
        let grads = generator.backward(&g_tape, &d_image)?;
        push(&mut g_grads, grads)?;
    }
    let g_grads = g_grads.expect("non-empty batches");
    if g_grads.iter().any(|g| !g.is_finite()) {
        // roll back the discriminator so the pair is unchanged on abort
        for ((_, param), grad) in discriminator.named_params_mut().into_iter().zip(&d_grads) {
            param.axpy(-lr_d, grad)?;
        }
        return Err(Error::Numeric("non-finite generator gradient; step aborted".to_string()));
    }
    for ((_, param), grad) in generator.named_params_mut().into_iter().zip(&g_grads) {
        param.axpy(-lr_g, grad)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct FilterStats {
    pub requested: usize,
    pub accepted: usize,
    pub attempts: usize,
}

impl FilterStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

/// Draw noise and emit G(z) only when D(G(z)) clears the threshold, until
/// `count` samples are accepted or the 100 x count attempt cap is hit
/// (partial result plus acceptance-rate stats).
pub fn generate_filtered_samples(
    generator: &GeneratorNet,
    discriminator: &DiscriminatorNet,
    count: usize,
    threshold: f64,
    seed: u64,
) -> Result<(Vec<Tensor>, FilterStats)> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0,1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = 100 * count;
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < cap {
        attempts += 1;
        let noise = sample_noise(generator.spec.noise_dim, &mut rng);
        let image = generator.forward(&noise)?;
        if discriminator.forward(&image)? >= threshold {
            out.push(image);
        }
    }
    let stats = FilterStats {
        requested: count,
        accepted: out.len(),
        attempts,
    };
    Ok((out, stats))
}

/// Standard-normal noise vector (Box-Muller over the seeded stream).
pub fn sample_noise(dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(vec![dim], |_| {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

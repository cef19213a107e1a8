//! Train the generator/discriminator pair with alternating steps on a toy
//! real distribution, watch the two-player objective move, then emit
//! discriminator-filtered samples.
//!
//! Run with: cargo run --example adversarial_pair

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waterline::net::{build_wlgeneratenet, GanSpec};
use waterline::train::{gan_alternating_step, gan_value, generate_filtered_samples, sample_noise};
use waterline::Tensor;

fn main() -> waterline::Result<()> {
    let spec = GanSpec::tiny();
    let (mut g, mut d) = build_wlgeneratenet(&spec, 21)?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);

    // Toy real data: near-constant single-channel images.
    let pixels = spec.image_channels * spec.image_size * spec.image_size;
    let real: Vec<Tensor> = (0..8)
        .map(|_| Tensor::full(vec![spec.image_channels, spec.image_size, spec.image_size],
                              rng.gen_range(0.5..0.6)))
        .collect();
    let noise: Vec<Tensor> = (0..8).map(|_| sample_noise(spec.noise_dim, &mut rng)).collect();

    let value = |g: &_, d: &waterline::net::DiscriminatorNet| -> waterline::Result<f64> {
        let d_real: Vec<f64> = real.iter().map(|x| d.forward(x)).collect::<waterline::Result<_>>()?;
        let d_fake: Vec<f64> = noise
            .iter()
            .map(|z| d.forward(&waterline::net::GeneratorNet::forward(g, z)?))
            .collect::<waterline::Result<_>>()?;
        gan_value(&d_real, &d_fake)
    };

    println!("toy images have {pixels} pixels; V at a blind D would be {:.4}", -2.0 * 2f64.ln());
    println!("step   0  V(D,G) = {:.4}", value(&g, &d)?);
    for step in 1..=60 {
        gan_alternating_step(&mut g, &mut d, &real, &noise, 0.05, 0.05)?;
        if step % 15 == 0 {
            println!("step {step:>3}  V(D,G) = {:.4}", value(&g, &d)?);
        }
    }

    for threshold in [0.1, 0.5] {
        let (samples, stats) = generate_filtered_samples(&g, &d, 5, threshold, 23)?;
        println!(
            "filter at D >= {threshold}: {} of {} accepted in {} attempts (rate {:.2})",
            samples.len(),
            stats.requested,
            stats.attempts,
            stats.acceptance_rate()
        );
    }
    Ok(())
}

//! Verify hand-written backward passes against central finite differences:
//! first a grouped convolution in isolation, then one parameter tensor of the
//! assembled desk-scale classifier.
//!
//! Run with: cargo run --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waterline::gradcheck::finite_diff_check;
use waterline::net::{build_wldetectnet, DetectNetSpec, ParamNet};
use waterline::ops::{conv2d, conv2d_vjp, Padding};
use waterline::Tensor;

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
}

fn main() -> waterline::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // Grouped convolution: loss = <conv(x, k, b), u> for a fixed random u.
    let x = random(vec![4, 6, 6], &mut rng);
    let k = random(vec![8, 2, 3, 3], &mut rng); // 2 groups of 2 input channels
    let b = random(vec![8], &mut rng);
    let y = conv2d(&x, &k, &b, 1, 2, Padding::Same)?;
    let u = random(y.shape().to_vec(), &mut rng);
    let dot = |t: &Tensor| {
        let s: f64 = t.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        Tensor::new(vec![1], vec![s])
    };
    let grads = conv2d_vjp(&x, &k, &b, 1, 2, Padding::Same, &u)?;
    let err_x = finite_diff_check(|t| dot(&conv2d(t, &k, &b, 1, 2, Padding::Same)?), &x, 1e-5, &grads.d_input)?;
    let err_k = finite_diff_check(|t| dot(&conv2d(&x, t, &b, 1, 2, Padding::Same)?), &k, 1e-5, &grads.d_kernel)?;
    let err_b = finite_diff_check(|t| dot(&conv2d(&x, &k, t, 1, 2, Padding::Same)?), &b, 1e-5, &grads.d_bias)?;
    println!("grouped conv  d_input {err_x:.2e}  d_kernel {err_k:.2e}  d_bias {err_b:.2e}");

    // Full network: loss = p(waterline) for a random patch; perturb the stem weight.
    let net = build_wldetectnet(&DetectNetSpec::desk(), 3)?;
    let size = net.spec.input_size;
    let patch = Tensor::new(
        vec![3, size, size],
        (0..3 * size * size).map(|_| rng.gen_range(0.0..0.05)).collect(),
    )?;
    let (probs, tape) = net.forward_tape(&patch)?;
    println!("forward probs: [{:.4}, {:.4}]", probs.data()[0], probs.data()[1]);
    let d_probs = Tensor::vector(&[0.0, 1.0]);
    let (grads, _) = net.backward(&tape, &d_probs)?;
    let names: Vec<String> = net.named_params().iter().map(|(n, _)| n.clone()).collect();
    let idx = names.iter().position(|n| n == "stem.weight").expect("stem weight");
    let stem_weight = net.named_params()[idx].1.clone();
    let err = finite_diff_check(
        |t| {
            let mut probe = net.clone();
            *probe.named_params_mut()[idx].1 = t.clone();
            let p = probe.waterline_prob(&patch)?;
            Tensor::new(vec![1], vec![p])
        },
        &stem_weight,
        1e-5,
        &grads[idx],
    )?;
    println!("desk net      d(stem.weight) worst relative error {err:.2e}");
    assert!(err_x.max(err_k).max(err_b).max(err) < 1e-4);
    println!("all gradients agree with finite differences within 1e-4");
    Ok(())
}

//! Acceptance gate: one test per criterion, each printing a pass line.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use waterline::detect::{connect_marks, scan_frame, scan_positions, DetectorConfig, MarkMode};
use waterline::gradcheck::finite_diff_check;
use waterline::metrics::{
    evaluate_map, f1, fp_count, irrelevance, precision, recall, stability, GroundTruth,
    RecallMode,
};
use waterline::net::{
    build_wldetectnet, build_wlgeneratenet, count_conv_layers, count_flops, total_flops,
    ConvCountPolicy, DetectNetSpec, GanSpec, ParamNet,
};
use waterline::ops::{
    channel_shuffle, channel_shuffle_vjp, conv2d, conv2d_vjp, fully_connected,
    fully_connected_vjp, global_avg_pool, global_avg_pool_vjp, scale_channels,
    scale_channels_vjp, Padding,
};
use waterline::synth::{
    oracle_classifier, synth_patch_dataset, synth_scene, BoundaryModel, SceneParams,
};
use waterline::tensor::Tensor;
use waterline::train::{
    gan_alternating_step, gan_value, sample_noise, train_two_stage, TrainSchedule, TrainStage,
};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_correctness() {
    let eps = 1e-5;
    let tol = 1e-4;
    let mut worst: f64 = 0.0;

    // every tensor-core op, as a scalar composition dot(op(x), u)
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        // conv2d wrt input, kernel, bias
        for &(groups, padding) in &[(1, Padding::Same), (2, Padding::Valid), (4, Padding::Same)] {
            let (c_in, c_out, k, hw, stride) = (4, 8, 3, 6, 1);
            let input = rand_tensor(&mut rng, vec![c_in, hw, hw], -1.0, 1.0);
            let kernel = rand_tensor(&mut rng, vec![c_out, c_in / groups, k, k], -0.5, 0.5);
            let bias = rand_tensor(&mut rng, vec![c_out], -0.2, 0.2);
            let probe = conv2d(&input, &kernel, &bias, stride, groups, padding).unwrap();
            let u = rand_tensor(&mut rng, probe.shape().to_vec(), -1.0, 1.0);
            let g = conv2d_vjp(&input, &kernel, &bias, stride, groups, padding, &u).unwrap();
            let dot = |t: &Tensor| {
                Tensor::new(
                    vec![1],
                    vec![t.data().iter().zip(u.data()).map(|(a, b)| a * b).sum()],
                )
            };
            let f_in = |x: &Tensor| dot(&conv2d(x, &kernel, &bias, stride, groups, padding)?);
            let f_k = |x: &Tensor| dot(&conv2d(&input, x, &bias, stride, groups, padding)?);
            let f_b = |x: &Tensor| dot(&conv2d(&input, &kernel, x, stride, groups, padding)?);
            worst = worst.max(finite_diff_check(&f_in, &input, eps, &g.d_input).unwrap());
            worst = worst.max(finite_diff_check(&f_k, &kernel, eps, &g.d_kernel).unwrap());
            worst = worst.max(finite_diff_check(&f_b, &bias, eps, &g.d_bias).unwrap());
        }
        // channel shuffle
        {
            let input = rand_tensor(&mut rng, vec![8, 3, 3], -1.0, 1.0);
            let u = rand_tensor(&mut rng, vec![8, 3, 3], -1.0, 1.0);
            let d = channel_shuffle_vjp(&u, 4).unwrap();
            let f = |x: &Tensor| {
                let y = channel_shuffle(x, 4)?;
                Tensor::new(
                    vec![1],
                    vec![y.data().iter().zip(u.data()).map(|(a, b)| a * b).sum()],
                )
            };
            worst = worst.max(finite_diff_check(&f, &input, eps, &d).unwrap());
        }
        // global average pool
        {
            let input = rand_tensor(&mut rng, vec![5, 4, 4], -1.0, 1.0);
            let u = rand_tensor(&mut rng, vec![5, 1, 1], -1.0, 1.0);
            let d = global_avg_pool_vjp(&[5, 4, 4], &u).unwrap();
            let f = |x: &Tensor| {
                let y = global_avg_pool(x)?;
                Tensor::new(
                    vec![1],
                    vec![y.data().iter().zip(u.data()).map(|(a, b)| a * b).sum()],
                )
            };
            worst = worst.max(finite_diff_check(&f, &input, eps, &d).unwrap());
        }
        // fully connected wrt input and weights
        {
            let input = rand_tensor(&mut rng, vec![6], -1.0, 1.0);
            let w = rand_tensor(&mut rng, vec![3, 6], -1.0, 1.0);
            let b = rand_tensor(&mut rng, vec![3], -1.0, 1.0);
            let u = rand_tensor(&mut rng, vec![3], -1.0, 1.0);
            let g = fully_connected_vjp(&input, &w, &u).unwrap();
            let dot = |t: &Tensor| {
                Tensor::new(
                    vec![1],
                    vec![t.data().iter().zip(u.data()).map(|(a, b)| a * b).sum()],
                )
            };
            let f_in = |x: &Tensor| dot(&fully_connected(x, &w, &b)?);
            let f_w = |x: &Tensor| dot(&fully_connected(&input, x, &b)?);
            worst = worst.max(finite_diff_check(&f_in, &input, eps, &g.d_input).unwrap());
            worst = worst.max(finite_diff_check(&f_w, &w, eps, &g.d_weights).unwrap());
        }
        // per-channel scaling wrt input and scales
        {
            let input = rand_tensor(&mut rng, vec![4, 3, 3], -1.0, 1.0);
            let scales = rand_tensor(&mut rng, vec![4], 0.1, 1.0);
            let u = rand_tensor(&mut rng, vec![4, 3, 3], -1.0, 1.0);
            let (d_in, d_s) = scale_channels_vjp(&input, &scales, &u).unwrap();
            let dot = |t: &Tensor| {
                Tensor::new(
                    vec![1],
                    vec![t.data().iter().zip(u.data()).map(|(a, b)| a * b).sum()],
                )
            };
            let f_in = |x: &Tensor| dot(&scale_channels(x, &scales)?);
            let f_s = |x: &Tensor| dot(&scale_channels(&input, x)?);
            worst = worst.max(finite_diff_check(&f_in, &input, eps, &d_in).unwrap());
            worst = worst.max(finite_diff_check(&f_s, &scales, eps, &d_s).unwrap());
        }
    }
    assert!(worst < tol, "op gradient error {worst:.3e} >= {tol:.0e}");

    // the full scaled-down network, every parameter tensor
    let spec = DetectNetSpec::desk();
    let net = build_wldetectnet(&spec, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // small input amplitude keeps the softmax away from saturation, where
    // finite differences of a ~1e-9 probability drown in rounding noise
    let patch = rand_tensor(&mut rng, vec![3, 16, 16], 0.0, 0.05);
    let (_, tape) = net.forward_tape(&patch).unwrap();
    let mut d = Tensor::zeros(vec![2]);
    d.data_mut()[0] = 1.0;
    let (grads, d_input) = net.backward(&tape, &d).unwrap();
    let count = net.named_params().len();
    // perturbing a head parameter leaves the feature extractor untouched, so
    // those sweeps reuse the precomputed features instead of a full forward
    let features = net.features(&patch).unwrap();
    let mut net_worst: f64 = 0.0;
    for pi in 0..count {
        let head_param = net.named_params()[pi].0.starts_with("head.");
        let f = |t: &Tensor| {
            let mut net2 = net.clone();
            *net2.named_params_mut()[pi].1 = t.clone();
            let p = if head_param {
                net2.forward_from_features(&features)?
            } else {
                net2.forward(&patch)?
            };
            Tensor::new(vec![1], vec![p.data()[0]])
        };
        let operand = net.named_params()[pi].1.clone();
        let err = finite_diff_check(&f, &operand, eps, &grads[pi]).unwrap();
        assert!(
            err < tol,
            "param {} gradient error {err:.3e} >= {tol:.0e}",
            net.named_params()[pi].0
        );
        net_worst = net_worst.max(err);
    }
    let f_patch = |t: &Tensor| {
        let p = net.forward(t)?;
        Tensor::new(vec![1], vec![p.data()[0]])
    };
    let err = finite_diff_check(&f_patch, &patch, eps, &d_input).unwrap();
    assert!(err < tol, "input gradient error {err:.3e}");
    net_worst = net_worst.max(err);

    println!(
        "acceptance criterion 1 (gradient correctness, op max {worst:.2e}, net max {net_worst:.2e}): pass"
    );
}

// ---------------------------------------------------------------------------
// 2. Operator oracles
// ---------------------------------------------------------------------------

/// Naive 7-loop grouped cross-correlation, the independent reference.
fn conv_oracle(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    groups: usize,
    padding: Padding,
) -> Tensor {
    let (_, h, w) = input.chw().unwrap();
    let ks = kernel.shape();
    let (c_out, c_in_pg, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    let axis = |len: usize, k: usize| -> (usize, i64) {
        match padding {
            Padding::Valid => ((len - k) / stride + 1, 0),
            Padding::Same => {
                let out = len.div_ceil(stride);
                let total = ((out - 1) * stride + k).saturating_sub(len);
                (out, (total / 2) as i64)
            }
        }
    };
    let (out_h, pad_top) = axis(h, kh);
    let (out_w, pad_left) = axis(w, kw);
    let out_pg = c_out / groups;
    let mut out = Tensor::zeros(vec![c_out, out_h, out_w]);
    for co in 0..c_out {
        let g = co / out_pg;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = bias.data()[co];
                for ci in 0..c_in_pg {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as i64 - pad_top;
                            let ix = (ox * stride + kx) as i64 - pad_left;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            acc += input.at3(g * c_in_pg + ci, iy as usize, ix as usize)
                                * kernel.data()[((co * c_in_pg + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                *out.at3_mut(co, oy, ox) = acc;
            }
        }
    }
    out
}

fn assert_close(a: &Tensor, b: &Tensor, tol: f64, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() <= tol, "{what}: {x} vs {y}");
    }
}

#[test]
fn criterion_2_operator_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..120 {
        // conv2d over random geometry and every group setting that divides
        let groups = [1usize, 2, 4][case % 3];
        let c_in = groups * rng.gen_range(1..3);
        let c_out = groups * rng.gen_range(1..3);
        let k = [1usize, 3][case % 2];
        let hw = rng.gen_range(k.max(2)..7);
        let stride = rng.gen_range(1..3);
        let padding = if case % 5 < 3 { Padding::Same } else { Padding::Valid };
        let input = rand_tensor(&mut rng, vec![c_in, hw, hw], -2.0, 2.0);
        let kernel = rand_tensor(&mut rng, vec![c_out, c_in / groups, k, k], -1.0, 1.0);
        let bias = rand_tensor(&mut rng, vec![c_out], -1.0, 1.0);
        let got = conv2d(&input, &kernel, &bias, stride, groups, padding).unwrap();
        let want = conv_oracle(&input, &kernel, &bias, stride, groups, padding);
        assert_close(&got, &want, 1e-12, "conv2d");

        // channel shuffle as an integer permutation (exact)
        let per = rng.gen_range(1..4);
        let c = groups * per;
        let labels = Tensor::from_fn(vec![c, 2, 2], |i| i as f64);
        let got = channel_shuffle(&labels, groups).unwrap();
        for ch_out in 0..c {
            // output channel j comes from input channel (j % groups)*per + j/groups
            let src = (ch_out % groups) * per + ch_out / groups;
            for y in 0..2 {
                for x in 0..2 {
                    assert_eq!(got.at3(ch_out, y, x), labels.at3(src, y, x), "shuffle");
                }
            }
        }

        // global average pool against a plain summation loop
        let (c, h, w) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
        let x = rand_tensor(&mut rng, vec![c, h, w], -3.0, 3.0);
        let got = global_avg_pool(&x).unwrap();
        for ch in 0..c {
            let mut sum = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    sum += x.at3(ch, y, xx);
                }
            }
            assert!((got.at3(ch, 0, 0) - sum / (h * w) as f64).abs() < 1e-12, "gap");
        }

        // fully connected against explicit dot products
        let (in_n, out_n) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let xv = rand_tensor(&mut rng, vec![in_n], -2.0, 2.0);
        let wm = rand_tensor(&mut rng, vec![out_n, in_n], -2.0, 2.0);
        let bv = rand_tensor(&mut rng, vec![out_n], -2.0, 2.0);
        let got = fully_connected(&xv, &wm, &bv).unwrap();
        for o in 0..out_n {
            let mut acc = bv.data()[o];
            for i in 0..in_n {
                acc += wm.data()[o * in_n + i] * xv.data()[i];
            }
            assert!((got.data()[o] - acc).abs() < 1e-12, "fc");
        }

        // per-channel scaling against an element loop
        let (c, h, w) = (rng.gen_range(1..5), rng.gen_range(1..4), rng.gen_range(1..4));
        let x = rand_tensor(&mut rng, vec![c, h, w], -2.0, 2.0);
        let s = rand_tensor(&mut rng, vec![c], -1.0, 1.0);
        let got = scale_channels(&x, &s).unwrap();
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    assert!(
                        (got.at3(ch, y, xx) - x.at3(ch, y, xx) * s.data()[ch]).abs() < 1e-12,
                        "scale_channels"
                    );
                }
            }
        }
    }
    println!("acceptance criterion 2 (operator oracles, 120 instances per op): pass");
}

// ---------------------------------------------------------------------------
// 3. Architecture accounting
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_architecture_accounting() {
    let spec = DetectNetSpec::default();
    let net = build_wldetectnet(&spec, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let patch = rand_tensor(&mut rng, vec![3, 64, 64], 0.0, 1.0);
    let probs = net.forward(&patch).unwrap();
    assert_eq!(probs.shape(), [2]);
    assert!((probs.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(probs.data().iter().all(|p| (0.0..=1.0).contains(p)));

    assert_eq!(count_conv_layers(&spec, ConvCountPolicy::ConvOnly), 52);
    assert_eq!(count_conv_layers(&spec, ConvCountPolicy::IncludeSeFc), 84);

    let rows = count_flops(&spec).unwrap();
    // itemized per layer: at least one row per conv instance plus SE rows
    assert!(rows.len() > count_conv_layers(&spec, ConvCountPolicy::IncludeSeFc));
    assert!(rows.iter().all(|r| !r.name.is_empty()));
    let mflops = total_flops(&rows) as f64 / 1e6;
    let deviation = (mflops - 3.12).abs() / 3.12;
    assert!(
        deviation > 0.05,
        "computed {mflops:.2} MFLOPs unexpectedly matches the published 3.12 figure"
    );
    println!(
        "acceptance criterion 3 (architecture: 52/84 conv layers, {mflops:.1} MFLOPs vs claimed 3.12, deviation flagged): pass"
    );
}

// ---------------------------------------------------------------------------
// 4. Detector geometry
// ---------------------------------------------------------------------------

fn boundary_pixels(b: &BoundaryModel, x0: i64, x1: i64) -> Vec<(i64, i64)> {
    (x0..=x1).map(|x| (x, b.row(x))).collect()
}

fn hausdorff(a: &[(i64, i64)], b: &[(i64, i64)]) -> f64 {
    let side = |from: &[(i64, i64)], to: &[(i64, i64)]| {
        from.iter()
            .map(|&(x, y)| {
                to.iter()
                    .map(|&(u, v)| (((x - u).pow(2) + (y - v).pow(2)) as f64).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0f64, f64::max)
    };
    side(a, b).max(side(b, a))
}

#[test]
fn criterion_4_detector_geometry() {
    let (r, s, h) = (16usize, 8usize, 4usize);
    let config = DetectorConfig {
        r,
        s,
        stride: h,
        sample_rate: 1,
        mark_mode: MarkMode::Polyline,
    };
    for (i, boundary) in [
        BoundaryModel::Horizontal { y: 60.0 },
        BoundaryModel::Sloped { y0: 50.0, slope: 0.15 },
        BoundaryModel::Sinusoidal { mean: 64.0, amplitude: 8.0, period: 96.0, phase: 0.7 },
    ]
    .into_iter()
    .enumerate()
    {
        let params = SceneParams {
            boundary: boundary.clone(),
            seed: 40 + i as u64,
            ..SceneParams::default()
        };
        let scene = synth_scene(&params).unwrap();
        let classifier = |_: &Tensor, center: (usize, usize)| {
            Ok(if oracle_classifier(center, s, &boundary) { 1.0 } else { 0.0 })
        };
        let marks = scan_frame(&scene.image, &config, r, &classifier).unwrap();

        // brute-force window enumeration: a center is marked iff some true
        // boundary pixel lies inside its s x s recognizing field
        let mut expected = BTreeSet::new();
        for &(cx, cy) in &scan_positions(params.width, params.height, r, h).unwrap() {
            let (ox, oy) = (cx as i64 - (s / 2) as i64, cy as i64 - (s / 2) as i64);
            let hit = (ox..ox + s as i64).any(|x| {
                let row = boundary.row(x);
                row >= oy && row < oy + s as i64
            });
            if hit {
                expected.insert((cx as i64, cy as i64));
            }
        }
        let got: BTreeSet<(i64, i64)> = marks.iter().copied().collect();
        assert_eq!(got, expected, "mark set mismatch for boundary {i}");

        // polyline accuracy inside the scanned column range
        let map = connect_marks(0, &marks, MarkMode::Polyline);
        let x0 = map.polyline.first().unwrap().0;
        let x1 = map.polyline.last().unwrap().0;
        let truth = boundary_pixels(&boundary, x0, x1);
        let d = hausdorff(&map.estimate, &truth);
        let bound = s as f64 / 2.0 + h as f64;
        assert!(d <= bound, "Hausdorff {d:.2} > {bound} for boundary {i}");
    }
    println!("acceptance criterion 4 (detector geometry, exact marks + Hausdorff bound): pass");
}

// ---------------------------------------------------------------------------
// 5. Metric oracles
// ---------------------------------------------------------------------------

fn dist(a: (i64, i64), b: (i64, i64)) -> f64 {
    (((a.0 - b.0).pow(2) + (a.1 - b.1).pow(2)) as f64).sqrt()
}

#[test]
fn criterion_5_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..500 {
        let lambda = rng.gen_range(0.5..8.0);
        let n_e = rng.gen_range(0..10);
        let n_a = rng.gen_range(1..6);
        let pt = |rng: &mut ChaCha8Rng| (rng.gen_range(-10..10), rng.gen_range(-10..10));
        let estimate: Vec<(i64, i64)> = (0..n_e).map(|_| pt(&mut rng)).collect();
        let anchors: Vec<(i64, i64)> = (0..n_a).map(|_| pt(&mut rng)).collect();
        let gt = GroundTruth::new(anchors.clone()).unwrap();
        let gt_pixels = gt.rasterize();

        // brute-force counts
        let matched = estimate
            .iter()
            .filter(|&&e| anchors.iter().any(|&a| dist(e, a) <= lambda))
            .count();
        let fp_expected: Vec<f64> = estimate
            .iter()
            .map(|&e| anchors.iter().map(|&a| dist(e, a)).fold(f64::INFINITY, f64::min))
            .filter(|&d| d > lambda)
            .collect();

        match precision(&estimate, &anchors, lambda) {
            Some(p) => assert!((p - matched as f64 / n_e as f64).abs() < 1e-12),
            None => assert_eq!(n_e, 0),
        }
        let r = recall(&estimate, &anchors, &gt_pixels, lambda, RecallMode::Literal).unwrap();
        assert!((r - matched as f64 / gt_pixels.len() as f64).abs() < 1e-12);
        let (fp, dists) = fp_count(&estimate, &anchors, lambda);
        assert_eq!(fp, fp_expected.len());
        assert_eq!(dists.len(), fp);
        for (a, b) in dists.iter().zip(&fp_expected) {
            assert!((a - b).abs() < 1e-12);
        }

        // irrelevance against a direct skewness formula
        if let Some(g1) = irrelevance(&dists) {
            let n = dists.len() as f64;
            let mean = dists.iter().sum::<f64>() / n;
            let m2 = dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
            let m3 = dists.iter().map(|d| (d - mean).powi(3)).sum::<f64>() / n;
            let expect =
                (n * (n - 1.0)).sqrt() / (n - 2.0) * m3 / m2.powf(1.5);
            assert!((g1 - expect).abs() < 1e-9, "irrelevance {g1} vs {expect}");
        } else {
            let n = dists.len();
            let mean = dists.iter().sum::<f64>() / (n.max(1)) as f64;
            let m2: f64 = dists.iter().map(|d| (d - mean).powi(2)).sum();
            assert!(n < 3 || m2 == 0.0);
        }

        // F1 harmonic-mean identity
        if let Some(p) = precision(&estimate, &anchors, lambda) {
            let f = f1(p, r);
            if p + r > 0.0 {
                assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-12);
            } else {
                assert_eq!(f, 0.0);
            }
        }

        // stability against direct mean/median/sigma arithmetic
        let n_s = rng.gen_range(2..9);
        let samples: Vec<f64> = (0..n_s).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let got = stability(&samples).unwrap();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
        };
        let expect = if var == 0.0 { 0.0 } else { (mean - median) / var.sqrt() };
        assert!((got - expect).abs() < 1e-12);
    }

    // trivial identities
    let gt = GroundTruth::new(vec![(0, 0), (10, 0), (20, 0)]).unwrap();
    let g = gt.rasterize();
    let report = evaluate_map(&g, &gt, 10.0, RecallMode::Literal);
    assert_eq!(report.precision, Some(1.0));
    assert_eq!(report.recall, Some(1.0));
    assert_eq!(report.f1, Some(1.0));
    assert_eq!(report.fp, 0);
    assert_eq!(stability(&[0.7, 0.7, 0.7, 0.7]).unwrap(), 0.0);
    let sym = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert!(irrelevance(&sym).unwrap().abs() < 1e-12);

    println!("acceptance criterion 5 (metric oracles, 500 instances): pass");
}

// ---------------------------------------------------------------------------
// 6. End-to-end desk-scale pipeline
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_end_to_end_pipeline() {
    let (r, s, h) = (16usize, 8usize, 4usize);
    let scene_for = |seed: u64, boundary: BoundaryModel| {
        synth_scene(&SceneParams {
            boundary,
            seed,
            ..SceneParams::default()
        })
        .unwrap()
    };
    let train_scenes = [
        scene_for(1, BoundaryModel::Horizontal { y: 64.0 }),
        scene_for(2, BoundaryModel::Sloped { y0: 55.0, slope: 0.1 }),
        scene_for(3, BoundaryModel::Sinusoidal { mean: 60.0, amplitude: 6.0, period: 96.0, phase: 0.3 }),
    ];
    let mut stage1 = Vec::new();
    let mut stage2 = Vec::new();
    for (i, scene) in train_scenes.iter().enumerate() {
        stage1.extend(synth_patch_dataset(scene, 30, 30, r, s, 16, 100 + i as u64).unwrap());
        stage2.extend(synth_patch_dataset(scene, 30, 30, r, s, 16, 200 + i as u64).unwrap());
    }

    let mut net = build_wldetectnet(&DetectNetSpec::desk(), 11).unwrap();
    let schedule = TrainSchedule {
        batch_size: 60,
        stages: vec![
            TrainStage { epochs: 10, learning_rate: 1e-5, seed: 21 },
            TrainStage { epochs: 5, learning_rate: 2e-6, seed: 22 },
        ],
        grad_clip: None,
    };
    let result = train_two_stage(&mut net, &schedule, &stage1, &stage2).unwrap();
    assert!(result.aborted.is_none(), "training aborted: {:?}", result.aborted);

    // stage-1 loss decreases in aggregate: last third well below first third
    let s1: Vec<f64> = result
        .history
        .iter()
        .filter(|rec| rec.stage == 0)
        .map(|rec| rec.mean_loss)
        .collect();
    let third = s1.len() / 3;
    let head: f64 = s1[..third].iter().sum::<f64>() / third as f64;
    let tail: f64 = s1[s1.len() - third..].iter().sum::<f64>() / third as f64;
    assert!(tail < head, "stage-1 loss did not decrease: {head:.4} -> {tail:.4}");
    assert!(
        s1.last().unwrap() < s1.first().unwrap(),
        "final stage-1 loss above initial"
    );

    let final_acc = result.history.last().unwrap().accuracy;
    assert!(final_acc >= 0.95, "final training accuracy {final_acc} < 0.95");

    // held-out zero-noise scenes
    let held = [
        scene_for(50, BoundaryModel::Sinusoidal { mean: 66.0, amplitude: 7.0, period: 120.0, phase: 2.1 }),
        scene_for(51, BoundaryModel::Sloped { y0: 70.0, slope: -0.08 }),
    ];
    let config = DetectorConfig {
        r,
        s,
        stride: h,
        sample_rate: 1,
        mark_mode: MarkMode::Polyline,
    };
    let classifier = |patch: &Tensor, _: (usize, usize)| net.waterline_prob(patch);
    let mut f1s = Vec::new();
    for scene in &held {
        let marks = scan_frame(&scene.image, &config, 16, &classifier).unwrap();
        let map = connect_marks(0, &marks, MarkMode::Polyline);
        let gt = GroundTruth::new(scene.anchors.clone()).unwrap();
        let report = evaluate_map(&map.estimate, &gt, 10.0, RecallMode::Literal);
        let f = report.f1.expect("defined F1 on held-out scene");
        assert!(f >= 0.9, "held-out F1 {f:.3} < 0.9");
        f1s.push(f);
    }
    println!(
        "acceptance criterion 6 (end-to-end: train acc {final_acc:.3}, held-out F1 {:?}): pass",
        f1s.iter().map(|f| (f * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
}

// ---------------------------------------------------------------------------
// 7. GAN sanity
// ---------------------------------------------------------------------------

/// Held-out real/fake classification accuracy of D at threshold 0.5.
fn d_accuracy(
    g: &waterline::net::GeneratorNet,
    d: &waterline::net::DiscriminatorNet,
    real: &[Tensor],
    noise: &[Tensor],
) -> f64 {
    let mut hits = 0usize;
    for x in real {
        hits += usize::from(d.forward(x).unwrap() >= 0.5);
    }
    for z in noise {
        let img = g.forward(z).unwrap();
        hits += usize::from(d.forward(&img).unwrap() < 0.5);
    }
    hits as f64 / (real.len() + noise.len()) as f64
}

fn toy_real(rng: &mut ChaCha8Rng) -> Tensor {
    let base = rng.gen_range(0.5..0.6);
    Tensor::from_fn(vec![1, 16, 16], |_| base)
}

#[test]
fn criterion_7_gan_sanity() {
    // Eq.-style closed form at the uninformed discriminator
    let v = gan_value(&[0.5, 0.5, 0.5], &[0.5, 0.5]).unwrap();
    assert!((v - (-2.0 * std::f64::consts::LN_2)).abs() < 1e-12);

    let spec = GanSpec::tiny();
    let run = |seed: u64| -> (Vec<f64>, f64, f64) {
        let (mut g, mut d) = build_wlgeneratenet(&spec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let held_real: Vec<Tensor> = (0..16).map(|_| toy_real(&mut rng)).collect();
        let held_noise: Vec<Tensor> = (0..16).map(|_| sample_noise(spec.noise_dim, &mut rng)).collect();
        // phase 1: discriminator-only steps make D separate real from the
        // untrained generator (zero generator rate leaves G untouched)
        for _ in 0..20 {
            let real: Vec<Tensor> = (0..4).map(|_| toy_real(&mut rng)).collect();
            let noise: Vec<Tensor> = (0..4).map(|_| sample_noise(spec.noise_dim, &mut rng)).collect();
            gan_alternating_step(&mut g, &mut d, &real, &noise, 0.0, 0.1).unwrap();
        }
        let early = d_accuracy(&g, &d, &held_real, &held_noise);
        // phase 2: adversarial play; the generator closing in on the real
        // distribution should pull D's held-out accuracy back toward chance
        for _ in 0..80 {
            let real: Vec<Tensor> = (0..4).map(|_| toy_real(&mut rng)).collect();
            let noise: Vec<Tensor> = (0..4).map(|_| sample_noise(spec.noise_dim, &mut rng)).collect();
            gan_alternating_step(&mut g, &mut d, &real, &noise, 0.2, 0.005).unwrap();
        }
        let late = d_accuracy(&g, &d, &held_real, &held_noise);
        let params = g
            .named_params()
            .iter()
            .chain(d.named_params().iter())
            .flat_map(|(_, t)| t.data().to_vec())
            .collect();
        (params, early, late)
    };

    // bit-reproducible per seed
    let (p1, _, _) = run(3);
    let (p2, _, _) = run(3);
    assert_eq!(p1, p2);

    // direction-only trend across 5 seeds: D accuracy moves toward 0.5
    let mut early_gap = 0.0;
    let mut late_gap = 0.0;
    for seed in 1..=5u64 {
        let (_, early, late) = run(seed);
        early_gap += (early - 0.5).abs();
        late_gap += (late - 0.5).abs();
    }
    assert!(
        late_gap < early_gap,
        "D accuracy gap grew: early {early_gap:.3} -> late {late_gap:.3} (summed over 5 seeds)"
    );
    println!(
        "acceptance criterion 7 (GAN: closed form, reproducible, |D acc - 0.5| {:.3} -> {:.3}): pass",
        early_gap / 5.0,
        late_gap / 5.0
    );
}

// ---------------------------------------------------------------------------
// 8. Determinism of the CLI surface
// ---------------------------------------------------------------------------

fn dir_snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn criterion_8_determinism() {
    let root = tempfile::tempdir().unwrap();
    let arg = |p: &std::path::Path| p.to_string_lossy().into_owned();

    let run_all = |tag: &str| -> Vec<(String, Vec<u8>)> {
        let base = root.path().join(tag);
        let data = base.join("data");
        let train = base.join("train");
        let det = base.join("det");
        waterline::cli::run([
            "waterline", "synth", "--out", &arg(&data), "--seed", "5", "--scenes", "2",
            "--r", "16", "--s", "8", "--pos", "12", "--neg", "12", "--scale", "desk",
        ])
        .unwrap();
        waterline::cli::run([
            "waterline", "train",
            "--stage1", &arg(&data.join("patches.bin")),
            "--stage2", &arg(&data.join("patches.bin")),
            "--out", &arg(&train), "--seed", "5", "--scale", "desk",
            "--epochs1", "2", "--epochs2", "1", "--batch", "12",
        ])
        .unwrap();
        waterline::cli::run([
            "waterline", "detect", "--frames", &arg(&data),
            "--weights", &arg(&train.join("weights.wld")),
            "--scale", "desk", "--r", "16", "--s", "8", "--stride", "8",
            "--out", &arg(&det),
        ])
        .unwrap();
        waterline::cli::run([
            "waterline", "eval", "--marks", &arg(&det.join("marks.csv")),
            "--anchors", &arg(&data.join("anchors.csv")),
            "--out", &arg(&base.join("report.csv")),
        ])
        .unwrap();
        waterline::cli::run([
            "waterline", "report", "--scale", "desk", "--out", &arg(&base.join("arch.csv")),
        ])
        .unwrap();
        let mut all = dir_snapshot(&data);
        all.extend(dir_snapshot(&train));
        all.extend(dir_snapshot(&det));
        all.push(("report.csv".into(), std::fs::read(base.join("report.csv")).unwrap()));
        all.push(("arch.csv".into(), std::fs::read(base.join("arch.csv")).unwrap()));
        all
    };

    let a = run_all("a");
    let b = run_all("b");
    assert_eq!(a.len(), b.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between reruns");
    }
    println!(
        "acceptance criterion 8 (determinism, {} artifacts byte-identical): pass",
        a.len()
    );
}

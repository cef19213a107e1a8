//! Declarative network construction: the Table-1-style sliding-window
//! classifier (stem conv, five repeatable shuffle/SE modules, full-spatial
//! output conv, softmax), the generator/discriminator pair, deterministic
//! He initialization, and parameter / MAC / conv-layer accounting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{
    channel_shuffle, channel_shuffle_vjp, conv2d, conv2d_vjp, fully_connected,
    fully_connected_vjp, global_avg_pool, global_avg_pool_vjp, relu, relu_vjp, scale_channels,
    scale_channels_vjp, sigmoid, sigmoid_vjp, softmax, softmax_vjp, upsample_nearest,
    upsample_nearest_vjp, Padding,
};
use crate::tensor::Tensor;
use crate::util::fnv1a64;

/// Per-stage channel plan at full width: (mid, out). The input of the first
/// instance of a stage is the previous stage's output; later instances take
/// the stage output. A stage whose input and output widths differ carries a
/// 1x1 conv on its shortcut path (stages 2 and 4); all others use identity
/// shortcuts.
const STAGE_PLAN: [(usize, usize); 5] = [(32, 64), (64, 128), (64, 128), (128, 256), (128, 256)];
const STEM_WIDTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectNetSpec {
    pub input_channels: usize,
    pub input_size: usize,
    /// Divide every tabulated channel width by this factor (1 = full width).
    pub width_div: usize,
    pub repeats: [usize; 5],
    pub groups: usize,
    pub classes: usize,
    /// Lower bound on the SE hidden width (hidden = max(this, C/4)).
    pub se_min_hidden: usize,
}

impl Default for DetectNetSpec {
    fn default() -> Self {
        DetectNetSpec {
            input_channels: 3,
            input_size: 64,
            width_div: 1,
            repeats: [8, 1, 3, 1, 3],
            groups: 4,
            classes: 2,
            se_min_hidden: 4,
        }
    }
}

impl DetectNetSpec {
    /// Desk-scale variant: every module once, width / 8, 16x16 input.
    pub fn desk() -> Self {
        DetectNetSpec {
            input_size: 16,
            width_div: 8,
            repeats: [1, 1, 1, 1, 1],
            ..Default::default()
        }
    }

    pub fn stem_width(&self) -> usize {
        STEM_WIDTH / self.width_div
    }

    fn stage_mid(&self, stage: usize) -> usize {
        STAGE_PLAN[stage].0 / self.width_div
    }

    fn stage_out(&self, stage: usize) -> usize {
        STAGE_PLAN[stage].1 / self.width_div
    }

    fn se_hidden(&self, channels: usize) -> usize {
        (channels / 4).max(self.se_min_hidden)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.input_size == 0 {
            return Err(Error::invalid("input geometry must be positive".to_string()));
        }
        if self.classes < 2 {
            return Err(Error::invalid("at least two output classes required".to_string()));
        }
        if self.width_div == 0 || STEM_WIDTH % self.width_div != 0 {
            return Err(Error::invalid(format!(
                "width divisor {} does not divide the stem width {STEM_WIDTH}",
                self.width_div
            )));
        }
        for (stage, (mid, out)) in STAGE_PLAN.iter().enumerate() {
            for (label, base) in [("mid", *mid), ("out", *out)] {
                if base % self.width_div != 0 {
                    return Err(Error::invalid(format!(
                        "stage {} {label} width {base} not divisible by width divisor {}",
                        stage + 1,
                        self.width_div
                    )));
                }
                let scaled = base / self.width_div;
                if scaled == 0 || scaled % self.groups != 0 {
                    return Err(Error::invalid(format!(
                        "stage {} {label} width {scaled} not divisible by group count {}",
                        stage + 1,
                        self.groups
                    )));
                }
            }
        }
        Ok(())
    }

    /// Ordered (stage, in, mid, out, has_shortcut_conv) for every module instance.
    pub fn module_instances(&self) -> Vec<ModuleGeom> {
        let mut out = Vec::new();
        let mut current = self.stem_width();
        for stage in 0..5 {
            for rep in 0..self.repeats[stage] {
                let geom = ModuleGeom {
                    stage: stage + 1,
                    rep,
                    in_ch: current,
                    mid_ch: self.stage_mid(stage),
                    out_ch: self.stage_out(stage),
                    se_hidden: self.se_hidden(self.stage_out(stage)),
                };
                current = geom.out_ch;
                out.push(geom);
            }
        }
        out
    }

    pub fn canonical_text(&self) -> String {
        format!(
            "detect;in={};size={};div={};rep={},{},{},{},{};groups={};classes={};semin={}",
            self.input_channels,
            self.input_size,
            self.width_div,
            self.repeats[0],
            self.repeats[1],
            self.repeats[2],
            self.repeats[3],
            self.repeats[4],
            self.groups,
            self.classes,
            self.se_min_hidden
        )
    }

    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModuleGeom {
    pub stage: usize,
    pub rep: usize,
    pub in_ch: usize,
    pub mid_ch: usize,
    pub out_ch: usize,
    pub se_hidden: usize,
}

impl ModuleGeom {
    pub fn has_shortcut_conv(&self) -> bool {
        self.in_ch != self.out_ch
    }
}

// ---------------------------------------------------------------------------
// Parameterized layers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl ConvLayer {
    fn he(
        rng: &mut ChaCha8Rng,
        out_ch: usize,
        in_per_group: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        groups: usize,
        padding: Padding,
    ) -> Self {
        let fan_in = (in_per_group * kh * kw) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weight = Tensor::from_fn(vec![out_ch, in_per_group, kh, kw], |_| {
            normal_sample(rng) * std
        });
        ConvLayer {
            weight,
            bias: Tensor::zeros(vec![out_ch]),
            stride,
            groups,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, &self.bias, self.stride, self.groups, self.padding)
    }

    pub fn vjp(&self, x: &Tensor, upstream: &Tensor) -> Result<crate::ops::ConvGrads> {
        conv2d_vjp(
            x,
            &self.weight,
            &self.bias,
            self.stride,
            self.groups,
            self.padding,
            upstream,
        )
    }
}

#[derive(Debug, Clone)]
pub struct FcLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl FcLayer {
    fn he(rng: &mut ChaCha8Rng, out_n: usize, in_n: usize) -> Self {
        let std = (2.0 / in_n as f64).sqrt();
        FcLayer {
            weight: Tensor::from_fn(vec![out_n, in_n], |_| normal_sample(rng) * std),
            bias: Tensor::zeros(vec![out_n]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        fully_connected(x, &self.weight, &self.bias)
    }
}

/// Box-Muller standard normal from a seeded uniform stream.
fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Debug, Clone)]
pub struct SeBranch {
    pub fc1: FcLayer,
    pub fc2: FcLayer,
}

#[derive(Debug, Clone)]
pub struct ShuffleModule {
    pub geom: ModuleGeom,
    pub pg: ConvLayer,
    pub dw: ConvLayer,
    pub pw: ConvLayer,
    pub se: SeBranch,
    pub shortcut: Option<ConvLayer>,
}

#[derive(Debug, Clone)]
pub struct DetectNet {
    pub spec: DetectNetSpec,
    pub seed: u64,
    pub stem: ConvLayer,
    pub modules: Vec<ShuffleModule>,
    pub head: ConvLayer,
}

/// Build the detection classifier from its spec with He fan-in init and zero
/// biases, seeded; identical seeds give bitwise-identical parameters.
pub fn build_wldetectnet(spec: &DetectNetSpec, seed: u64) -> Result<DetectNet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stem = ConvLayer::he(
        &mut rng,
        spec.stem_width(),
        spec.input_channels,
        3,
        3,
        1,
        1,
        Padding::Same,
    );
    let mut modules = Vec::new();
    for geom in spec.module_instances() {
        let pg = ConvLayer::he(
            &mut rng,
            geom.mid_ch,
            geom.in_ch / spec.groups,
            1,
            1,
            1,
            spec.groups,
            Padding::Valid,
        );
        let dw = ConvLayer::he(&mut rng, geom.mid_ch, 1, 3, 3, 1, geom.mid_ch, Padding::Same);
        let pw = ConvLayer::he(
            &mut rng,
            geom.out_ch,
            geom.mid_ch / spec.groups,
            1,
            1,
            1,
            spec.groups,
            Padding::Valid,
        );
        let se = SeBranch {
            fc1: FcLayer::he(&mut rng, geom.se_hidden, geom.out_ch),
            fc2: FcLayer::he(&mut rng, geom.out_ch, geom.se_hidden),
        };
        let shortcut = geom.has_shortcut_conv().then(|| {
            ConvLayer::he(&mut rng, geom.out_ch, geom.in_ch, 1, 1, 1, 1, Padding::Valid)
        });
        modules.push(ShuffleModule {
            geom,
            pg,
            dw,
            pw,
            se,
            shortcut,
        });
    }
    let last = spec.stage_out(4);
    let head = ConvLayer::he(
        &mut rng,
        spec.classes,
        last,
        spec.input_size,
        spec.input_size,
        1,
        1,
        Padding::Valid,
    );
    Ok(DetectNet {
        spec: spec.clone(),
        seed,
        stem,
        modules,
        head,
    })
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

pub struct ModuleTape {
    input: Tensor,
    shuffle_out: Tensor,
    dw_out: Tensor,
    pw_out: Tensor,
    pooled: Tensor,
    fc1_pre: Tensor,
    fc1_act: Tensor,
    gate: Tensor,
}

pub struct DetectTape {
    input: Tensor,
    stem_out: Tensor,
    modules: Vec<ModuleTape>,
    pub probs: Tensor,
}

impl ShuffleModule {
    fn forward_tape(&self, groups: usize, x: &Tensor) -> Result<(Tensor, ModuleTape)> {
        let pg_out = self.pg.forward(x)?;
        let shuffle_out = channel_shuffle(&pg_out, groups)?;
        let dw_out = self.dw.forward(&shuffle_out)?;
        let pw_out = self.pw.forward(&dw_out)?;
        let pooled = global_avg_pool(&pw_out)?;
        let fc1_pre = self.se.fc1.forward(&pooled)?;
        let fc1_act = relu(&fc1_pre);
        let gate = sigmoid(&self.se.fc2.forward(&fc1_act)?);
        let scaled = scale_channels(&pw_out, &gate)?;
        let residual = match &self.shortcut {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        let out = scaled.add(&residual)?;
        let tape = ModuleTape {
            input: x.clone(),
            shuffle_out,
            dw_out,
            pw_out,
            pooled,
            fc1_pre,
            fc1_act,
            gate,
        };
        Ok((out, tape))
    }

    /// Returns the gradient with respect to the module input and pushes the
    /// parameter gradients (canonical order) into `grads`.
    fn backward(
        &self,
        groups: usize,
        tape: &ModuleTape,
        d_out: &Tensor,
        grads: &mut Vec<Tensor>,
    ) -> Result<Tensor> {
        // SE branch.
        let (d_pw_scale, d_gate) = scale_channels_vjp(&tape.pw_out, &tape.gate, d_out)?;
        let d_fc2_pre = sigmoid_vjp(&tape.gate, &d_gate)?;
        let fc2_g = fully_connected_vjp(&tape.fc1_act, &self.se.fc2.weight, &d_fc2_pre)?;
        let d_fc1_act = fc2_g.d_input;
        let d_fc1_pre = relu_vjp(&tape.fc1_pre, &d_fc1_act)?;
        let fc1_g = fully_connected_vjp(&tape.pooled, &self.se.fc1.weight, &d_fc1_pre)?;
        let d_pooled = fc1_g.d_input;
        let d_pw_pool = global_avg_pool_vjp(tape.pw_out.shape(), &d_pooled)?;
        let d_pw_out = d_pw_scale.add(&d_pw_pool)?;

        // Main path.
        let pw_g = self.pw.vjp(&tape.dw_out, &d_pw_out)?;
        let dw_g = self.dw.vjp(&tape.shuffle_out, &pw_g.d_input)?;
        let d_pg_out = channel_shuffle_vjp(&dw_g.d_input, groups)?;
        let pg_g = self.pg.vjp(&tape.input, &d_pg_out)?;

        // Shortcut path (upstream of the residual add equals d_out).
        let mut d_input = pg_g.d_input;
        let shortcut_g = match &self.shortcut {
            Some(conv) => {
                let g = conv.vjp(&tape.input, d_out)?;
                d_input = d_input.add(&g.d_input)?;
                Some(g)
            }
            None => {
                d_input = d_input.add(d_out)?;
                None
            }
        };

        grads.push(pg_g.d_kernel);
        grads.push(pg_g.d_bias);
        grads.push(dw_g.d_kernel);
        grads.push(dw_g.d_bias);
        grads.push(pw_g.d_kernel);
        grads.push(pw_g.d_bias);
        grads.push(fc1_g.d_weights);
        grads.push(fc1_g.d_bias);
        grads.push(fc2_g.d_weights);
        grads.push(fc2_g.d_bias);
        if let Some(g) = shortcut_g {
            grads.push(g.d_kernel);
            grads.push(g.d_bias);
        }
        Ok(d_input)
    }
}

impl DetectNet {
    /// Forward pass to the class distribution (softmax over `classes` logits).
    pub fn forward(&self, patch: &Tensor) -> Result<Tensor> {
        Ok(self.forward_tape(patch)?.1.probs)
    }

    /// Waterline-class probability (index 1 of the softmax output).
    pub fn waterline_prob(&self, patch: &Tensor) -> Result<f64> {
        Ok(self.forward(patch)?.data()[1])
    }

    /// Activations entering the output conv (the last module's output).
    pub fn features(&self, patch: &Tensor) -> Result<Tensor> {
        let mut x = self.stem.forward(patch)?;
        for module in &self.modules {
            let (next, _) = module.forward_tape(self.spec.groups, &x)?;
            x = next;
        }
        Ok(x)
    }

    /// Class distribution from precomputed [`Self::features`] output.
    pub fn forward_from_features(&self, features: &Tensor) -> Result<Tensor> {
        let logits3 = self.head.forward(features)?;
        softmax(&logits3.reshape(vec![self.spec.classes])?)
    }

    pub fn forward_tape(&self, patch: &Tensor) -> Result<(Tensor, DetectTape)> {
        let expect = [self.spec.input_channels, self.spec.input_size, self.spec.input_size];
        if patch.shape() != expect {
            return Err(Error::shape(format!(
                "patch shape {:?} != network input {:?}",
                patch.shape(),
                expect
            )));
        }
        let stem_out = self.stem.forward(patch)?;
        let mut x = stem_out.clone();
        let mut tapes = Vec::with_capacity(self.modules.len());
        for module in &self.modules {
            let (next, tape) = module.forward_tape(self.spec.groups, &x)?;
            tapes.push(tape);
            x = next;
        }
        let logits3 = self.head.forward(&x)?;
        let logits = logits3.reshape(vec![self.spec.classes])?;
        let probs = softmax(&logits)?;
        let tape = DetectTape {
            input: patch.clone(),
            stem_out,
            modules: tapes,
            probs: probs.clone(),
        };
        Ok((probs, tape))
    }

    /// Backward pass from a gradient with respect to the softmax output.
    /// Returns parameter gradients in canonical (named) order and the
    /// gradient with respect to the input patch.
    pub fn backward(&self, tape: &DetectTape, d_probs: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let d_logits = softmax_vjp(&tape.probs, d_probs)?;
        self.backward_logits(tape, &d_logits)
    }

    /// Backward pass from a gradient with respect to the pre-softmax logits.
    /// Cross-entropy training uses this entry with d_logits = probs - onehot,
    /// which stays well-scaled even when the softmax saturates.
    pub fn backward_logits(&self, tape: &DetectTape, d_logits: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let d_logits3 = d_logits.reshape(vec![self.spec.classes, 1, 1])?;
        let head_in = if tape.modules.is_empty() {
            tape.stem_out.clone()
        } else {
            module_output(self, tape, tape.modules.len() - 1)?
        };
        let head_g = self.head.vjp(&head_in, &d_logits3)?;
        let mut d_x = head_g.d_input;

        // Walk modules in reverse, collecting grads per module then reversing
        // the per-module chunks into canonical forward order.
        let mut module_grads: Vec<Vec<Tensor>> = Vec::with_capacity(self.modules.len());
        for (module, mtape) in self.modules.iter().zip(&tape.modules).rev() {
            let mut chunk = Vec::new();
            d_x = module.backward(self.spec.groups, mtape, &d_x, &mut chunk)?;
            module_grads.push(chunk);
        }
        module_grads.reverse();

        let stem_g = self.stem.vjp(&tape.input, &d_x)?;
        let mut grads = Vec::new();
        grads.push(stem_g.d_kernel);
        grads.push(stem_g.d_bias);
        for chunk in module_grads {
            grads.extend(chunk);
        }
        grads.push(head_g.d_kernel);
        grads.push(head_g.d_bias);
        Ok((grads, stem_g.d_input))
    }
}

/// Output activation of module `idx` (input to the next layer). The module
/// tapes store inputs, so the output of module i is the input of module i+1,
/// except for the last one which must be recomputed cheaply from its tape.
fn module_output(net: &DetectNet, tape: &DetectTape, idx: usize) -> Result<Tensor> {
    if idx + 1 < tape.modules.len() {
        return Ok(tape.modules[idx + 1].input.clone());
    }
    let m = &net.modules[idx];
    let t = &tape.modules[idx];
    let scaled = scale_channels(&t.pw_out, &t.gate)?;
    let residual = match &m.shortcut {
        Some(conv) => conv.forward(&t.input)?,
        None => t.input.clone(),
    };
    scaled.add(&residual)
}

// ---------------------------------------------------------------------------
// Generator / discriminator pair
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GanSpec {
    pub noise_dim: usize,
    pub image_channels: usize,
    pub image_size: usize,
    pub g_hidden: [usize; 2],
    pub d_hidden: [usize; 2],
}

impl Default for GanSpec {
    fn default() -> Self {
        GanSpec {
            noise_dim: 100,
            image_channels: 3,
            image_size: 64,
            g_hidden: [32, 16],
            d_hidden: [8, 16],
        }
    }
}

impl GanSpec {
    /// Small test variant producing 1x16x16 images.
    pub fn tiny() -> Self {
        GanSpec {
            noise_dim: 16,
            image_channels: 1,
            image_size: 16,
            g_hidden: [8, 8],
            d_hidden: [4, 8],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 || self.image_channels == 0 {
            return Err(Error::invalid("noise and channel dims must be positive".to_string()));
        }
        if self.image_size < 4 || self.image_size % 4 != 0 {
            return Err(Error::invalid(format!(
                "generator image size {} must be a positive multiple of 4",
                self.image_size
            )));
        }
        Ok(())
    }

    pub fn canonical_text(&self, role: &str) -> String {
        format!(
            "gan-{role};z={};c={};size={};g={},{};d={},{}",
            self.noise_dim,
            self.image_channels,
            self.image_size,
            self.g_hidden[0],
            self.g_hidden[1],
            self.d_hidden[0],
            self.d_hidden[1]
        )
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorNet {
    pub spec: GanSpec,
    pub seed: u64,
    pub fc: FcLayer,
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorNet {
    pub spec: GanSpec,
    pub seed: u64,
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub fc: FcLayer,
}

/// Build the generator/discriminator pair from one seed.
pub fn build_wlgeneratenet(spec: &GanSpec, seed: u64) -> Result<(GeneratorNet, DiscriminatorNet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s0 = spec.image_size / 4;
    let [g0, g1] = spec.g_hidden;
    let generator = GeneratorNet {
        spec: spec.clone(),
        seed,
        fc: FcLayer::he(&mut rng, g0 * s0 * s0, spec.noise_dim),
        conv1: ConvLayer::he(&mut rng, g1, g0, 3, 3, 1, 1, Padding::Same),
        conv2: ConvLayer::he(&mut rng, spec.image_channels, g1, 3, 3, 1, 1, Padding::Same),
    };
    let [d0, d1] = spec.d_hidden;
    let discriminator = DiscriminatorNet {
        spec: spec.clone(),
        seed,
        conv1: ConvLayer::he(&mut rng, d0, spec.image_channels, 3, 3, 1, 1, Padding::Same),
        conv2: ConvLayer::he(&mut rng, d1, d0, 3, 3, 1, 1, Padding::Same),
        fc: FcLayer::he(&mut rng, 1, d1),
    };
    Ok((generator, discriminator))
}

pub struct GeneratorTape {
    noise: Tensor,
    fc_pre: Tensor,
    fc_act_map: Tensor,
    up1: Tensor,
    conv1_pre: Tensor,
    up2: Tensor,
    pub image: Tensor,
}

impl GeneratorNet {
    pub fn forward(&self, noise: &Tensor) -> Result<Tensor> {
        Ok(self.forward_tape(noise)?.1.image)
    }

    pub fn forward_tape(&self, noise: &Tensor) -> Result<(Tensor, GeneratorTape)> {
        if noise.shape() != [self.spec.noise_dim] {
            return Err(Error::shape(format!(
                "noise shape {:?} != [{}]",
                noise.shape(),
                self.spec.noise_dim
            )));
        }
        let s0 = self.spec.image_size / 4;
        let g0 = self.spec.g_hidden[0];
        let fc_pre = self.fc.forward(noise)?;
        let fc_act_map = relu(&fc_pre).reshape(vec![g0, s0, s0])?;
        let up1 = upsample_nearest(&fc_act_map, 2)?;
        let conv1_pre = self.conv1.forward(&up1)?;
        let up2 = upsample_nearest(&relu(&conv1_pre), 2)?;
        let image = sigmoid(&self.conv2.forward(&up2)?);
        let tape = GeneratorTape {
            noise: noise.clone(),
            fc_pre,
            fc_act_map,
            up1,
            conv1_pre,
            up2,
            image: image.clone(),
        };
        Ok((tape.image.clone(), tape))
    }

    /// Parameter gradients (canonical order) from a gradient wrt the image.
    pub fn backward(&self, tape: &GeneratorTape, d_image: &Tensor) -> Result<Vec<Tensor>> {
        let d_conv2_pre = sigmoid_vjp(&tape.image, d_image)?;
        let conv2_g = self.conv2.vjp(&tape.up2, &d_conv2_pre)?;
        let conv1_act = relu(&tape.conv1_pre);
        let d_conv1_act = upsample_nearest_vjp(conv1_act.shape(), 2, &conv2_g.d_input)?;
        let d_conv1_pre = relu_vjp(&tape.conv1_pre, &d_conv1_act)?;
        let conv1_g = self.conv1.vjp(&tape.up1, &d_conv1_pre)?;
        let d_fc_act_map = upsample_nearest_vjp(tape.fc_act_map.shape(), 2, &conv1_g.d_input)?;
        let d_fc_act = d_fc_act_map.reshape(vec![tape.fc_pre.numel()])?;
        let d_fc_pre = relu_vjp(&tape.fc_pre, &d_fc_act)?;
        let fc_g = fully_connected_vjp(&tape.noise, &self.fc.weight, &d_fc_pre)?;
        Ok(vec![
            fc_g.d_weights,
            fc_g.d_bias,
            conv1_g.d_kernel,
            conv1_g.d_bias,
            conv2_g.d_kernel,
            conv2_g.d_bias,
        ])
    }
}

pub struct DiscriminatorTape {
    input: Tensor,
    conv1_pre: Tensor,
    conv1_act: Tensor,
    conv2_pre: Tensor,
    pooled: Tensor,
    pub prob: f64,
}

impl DiscriminatorNet {
    pub fn forward(&self, image: &Tensor) -> Result<f64> {
        Ok(self.forward_tape(image)?.prob)
    }

    pub fn forward_tape(&self, image: &Tensor) -> Result<DiscriminatorTape> {
        let expect = [self.spec.image_channels, self.spec.image_size, self.spec.image_size];
        if image.shape() != expect {
            return Err(Error::shape(format!(
                "discriminator input shape {:?} != {:?}",
                image.shape(),
                expect
            )));
        }
        let conv1_pre = self.conv1.forward(image)?;
        let conv1_act = relu(&conv1_pre);
        let conv2_pre = self.conv2.forward(&conv1_act)?;
        let pooled = global_avg_pool(&relu(&conv2_pre))?;
        let logit = self.fc.forward(&pooled)?;
        let prob = sigmoid(&logit).data()[0];
        Ok(DiscriminatorTape {
            input: image.clone(),
            conv1_pre,
            conv1_act,
            conv2_pre,
            pooled,
            prob,
        })
    }

    /// Parameter gradients (canonical order) and input-image gradient from a
    /// scalar gradient wrt the output probability.
    pub fn backward(&self, tape: &DiscriminatorTape, d_prob: f64) -> Result<(Vec<Tensor>, Tensor)> {
        let prob_t = Tensor::vector(&[tape.prob]);
        let d_logit = sigmoid_vjp(&prob_t, &Tensor::vector(&[d_prob]))?;
        let fc_g = fully_connected_vjp(&tape.pooled, &self.fc.weight, &d_logit)?;
        let conv2_act = relu(&tape.conv2_pre);
        let d_conv2_act = global_avg_pool_vjp(conv2_act.shape(), &fc_g.d_input)?;
        let d_conv2_pre = relu_vjp(&tape.conv2_pre, &d_conv2_act)?;
        let conv2_g = self.conv2.vjp(&tape.conv1_act, &d_conv2_pre)?;
        let d_conv1_pre = relu_vjp(&tape.conv1_pre, &conv2_g.d_input)?;
        let conv1_g = self.conv1.vjp(&tape.input, &d_conv1_pre)?;
        let grads = vec![
            conv1_g.d_kernel,
            conv1_g.d_bias,
            conv2_g.d_kernel,
            conv2_g.d_bias,
            fc_g.d_weights,
            fc_g.d_bias,
        ];
        Ok((grads, conv1_g.d_input))
    }
}

// ---------------------------------------------------------------------------
// Named parameter access (shared by save/load, counting, SGD)
// ---------------------------------------------------------------------------

/// A network whose parameters can be walked in a stable canonical order.
pub trait ParamNet {
    fn spec_fingerprint(&self) -> u64;
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;
}

impl ParamNet for DetectNet {
    fn spec_fingerprint(&self) -> u64 {
        self.spec.fingerprint()
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("stem.weight".to_string(), &self.stem.weight),
            ("stem.bias".to_string(), &self.stem.bias),
        ];
        for m in &self.modules {
            let p = format!("m{}.{}", m.geom.stage, m.geom.rep);
            out.push((format!("{p}.pg.weight"), &m.pg.weight));
            out.push((format!("{p}.pg.bias"), &m.pg.bias));
            out.push((format!("{p}.dw.weight"), &m.dw.weight));
            out.push((format!("{p}.dw.bias"), &m.dw.bias));
            out.push((format!("{p}.pw.weight"), &m.pw.weight));
            out.push((format!("{p}.pw.bias"), &m.pw.bias));
            out.push((format!("{p}.se.fc1.weight"), &m.se.fc1.weight));
            out.push((format!("{p}.se.fc1.bias"), &m.se.fc1.bias));
            out.push((format!("{p}.se.fc2.weight"), &m.se.fc2.weight));
            out.push((format!("{p}.se.fc2.bias"), &m.se.fc2.bias));
            if let Some(sc) = &m.shortcut {
                out.push((format!("{p}.shortcut.weight"), &sc.weight));
                out.push((format!("{p}.shortcut.bias"), &sc.bias));
            }
        }
        out.push(("head.weight".to_string(), &self.head.weight));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("stem.weight".to_string(), &mut self.stem.weight),
            ("stem.bias".to_string(), &mut self.stem.bias),
        ];
        for m in &mut self.modules {
            let p = format!("m{}.{}", m.geom.stage, m.geom.rep);
            out.push((format!("{p}.pg.weight"), &mut m.pg.weight));
            out.push((format!("{p}.pg.bias"), &mut m.pg.bias));
            out.push((format!("{p}.dw.weight"), &mut m.dw.weight));
            out.push((format!("{p}.dw.bias"), &mut m.dw.bias));
            out.push((format!("{p}.pw.weight"), &mut m.pw.weight));
            out.push((format!("{p}.pw.bias"), &mut m.pw.bias));
            out.push((format!("{p}.se.fc1.weight"), &mut m.se.fc1.weight));
            out.push((format!("{p}.se.fc1.bias"), &mut m.se.fc1.bias));
            out.push((format!("{p}.se.fc2.weight"), &mut m.se.fc2.weight));
            out.push((format!("{p}.se.fc2.bias"), &mut m.se.fc2.bias));
            if let Some(sc) = &mut m.shortcut {
                out.push((format!("{p}.shortcut.weight"), &mut sc.weight));
                out.push((format!("{p}.shortcut.bias"), &mut sc.bias));
            }
        }
        out.push(("head.weight".to_string(), &mut self.head.weight));
        out.push(("head.bias".to_string(), &mut self.head.bias));
        out
    }
}

impl ParamNet for GeneratorNet {
    fn spec_fingerprint(&self) -> u64 {
        fnv1a64(self.spec.canonical_text("generator").as_bytes())
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("fc.weight".into(), &self.fc.weight),
            ("fc.bias".into(), &self.fc.bias),
            ("conv1.weight".into(), &self.conv1.weight),
            ("conv1.bias".into(), &self.conv1.bias),
            ("conv2.weight".into(), &self.conv2.weight),
            ("conv2.bias".into(), &self.conv2.bias),
        ]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("fc.weight".into(), &mut self.fc.weight),
            ("fc.bias".into(), &mut self.fc.bias),
            ("conv1.weight".into(), &mut self.conv1.weight),
            ("conv1.bias".into(), &mut self.conv1.bias),
            ("conv2.weight".into(), &mut self.conv2.weight),
            ("conv2.bias".into(), &mut self.conv2.bias),
        ]
    }
}

impl ParamNet for DiscriminatorNet {
    fn spec_fingerprint(&self) -> u64 {
        fnv1a64(self.spec.canonical_text("discriminator").as_bytes())
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("conv1.weight".into(), &self.conv1.weight),
            ("conv1.bias".into(), &self.conv1.bias),
            ("conv2.weight".into(), &self.conv2.weight),
            ("conv2.bias".into(), &self.conv2.bias),
            ("fc.weight".into(), &self.fc.weight),
            ("fc.bias".into(), &self.fc.bias),
        ]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("conv1.weight".into(), &mut self.conv1.weight),
            ("conv1.bias".into(), &mut self.conv1.bias),
            ("conv2.weight".into(), &mut self.conv2.weight),
            ("conv2.bias".into(), &mut self.conv2.bias),
            ("fc.weight".into(), &mut self.fc.weight),
            ("fc.bias".into(), &mut self.fc.bias),
        ]
    }
}

/// Exact count of scalar parameters including biases.
pub fn count_params(net: &dyn ParamNet) -> usize {
    net.named_params().iter().map(|(_, t)| t.numel()).sum()
}

/// Set every parameter to zero (softmax bootstrap and unit tests).
pub fn zero_params(net: &mut dyn ParamNet) {
    for (_, t) in net.named_params_mut() {
        for v in t.data_mut() {
            *v = 0.0;
        }
    }
}

// ---------------------------------------------------------------------------
// FLOP / MAC / conv-layer accounting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    pub macs: u64,
    /// 2 x MACs for conv/fc layers; elementwise op counts otherwise.
    pub flops: u64,
    pub params: u64,
}

fn conv_cost(name: &str, out_hw: usize, c_out: usize, c_in_pg: usize, k: usize) -> LayerCost {
    let macs = (out_hw * out_hw * c_out * c_in_pg * k * k) as u64;
    LayerCost {
        name: name.to_string(),
        kind: "conv",
        macs,
        flops: 2 * macs,
        params: (c_out * c_in_pg * k * k + c_out) as u64,
    }
}

fn fc_cost(name: &str, out_n: usize, in_n: usize) -> LayerCost {
    let macs = (out_n * in_n) as u64;
    LayerCost {
        name: name.to_string(),
        kind: "fc",
        macs,
        flops: 2 * macs,
        params: (out_n * in_n + out_n) as u64,
    }
}

fn elem_cost(name: &str, kind: &'static str, ops: usize) -> LayerCost {
    LayerCost {
        name: name.to_string(),
        kind,
        macs: 0,
        flops: ops as u64,
        params: 0,
    }
}

/// Per-layer MAC/FLOP/param table for the detection network. A pure function
/// of the spec: seeds and weights never enter.
pub fn count_flops(spec: &DetectNetSpec) -> Result<Vec<LayerCost>> {
    spec.validate()?;
    let hw = spec.input_size;
    let mut rows = vec![conv_cost("stem", hw, spec.stem_width(), spec.input_channels, 3)];
    for g in spec.module_instances() {
        let p = format!("m{}.{}", g.stage, g.rep);
        rows.push(conv_cost(&format!("{p}.pg"), hw, g.mid_ch, g.in_ch / spec.groups, 1));
        rows.push(elem_cost(&format!("{p}.shuffle"), "shuffle", 0));
        rows.push(conv_cost(&format!("{p}.dw"), hw, g.mid_ch, 1, 3));
        rows.push(conv_cost(&format!("{p}.pw"), hw, g.out_ch, g.mid_ch / spec.groups, 1));
        rows.push(elem_cost(&format!("{p}.se.gap"), "gap", g.out_ch * hw * hw));
        rows.push(fc_cost(&format!("{p}.se.fc1"), g.se_hidden, g.out_ch));
        rows.push(elem_cost(&format!("{p}.se.relu"), "relu", g.se_hidden));
        rows.push(fc_cost(&format!("{p}.se.fc2"), g.out_ch, g.se_hidden));
        rows.push(elem_cost(&format!("{p}.se.sigmoid"), "sigmoid", g.out_ch));
        rows.push(elem_cost(&format!("{p}.se.scale"), "scale", g.out_ch * hw * hw));
        if g.has_shortcut_conv() {
            rows.push(conv_cost(&format!("{p}.shortcut"), hw, g.out_ch, g.in_ch, 1));
        }
        rows.push(elem_cost(&format!("{p}.residual"), "add", g.out_ch * hw * hw));
    }
    // Full-spatial-extent output conv: one output position per class.
    let last = spec.stage_out(4);
    let macs = (spec.classes * last * hw * hw) as u64;
    rows.push(LayerCost {
        name: "head".to_string(),
        kind: "conv",
        macs,
        flops: 2 * macs,
        params: (spec.classes * last * hw * hw + spec.classes) as u64,
    });
    rows.push(elem_cost("softmax", "softmax", 3 * spec.classes));
    Ok(rows)
}

pub fn total_macs(rows: &[LayerCost]) -> u64 {
    rows.iter().map(|r| r.macs).sum()
}

pub fn total_flops(rows: &[LayerCost]) -> u64 {
    rows.iter().map(|r| r.flops).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvCountPolicy {
    /// stem + module convs + shortcut convs + output conv.
    ConvOnly,
    /// Additionally count the two SE fully-connected layers per module.
    IncludeSeFc,
}

/// Count conv-kind layer instances under a policy. A pure function of the spec.
pub fn count_conv_layers(spec: &DetectNetSpec, policy: ConvCountPolicy) -> usize {
    let instances = spec.module_instances();
    let shortcuts = instances.iter().filter(|g| g.has_shortcut_conv()).count();
    let mut n = 1 + 3 * instances.len() + shortcuts + 1;
    if policy == ConvCountPolicy::IncludeSeFc {
        n += 2 * instances.len();
    }
    n
}

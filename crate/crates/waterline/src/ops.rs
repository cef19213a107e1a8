//! Forward operators and their reverse-mode gradients (vector-Jacobian products).
//!
//! Convolution is cross-correlation (no kernel flip). All math is f64 and every
//! operator is a pure function of its inputs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding chosen so that out = ceil(in / stride).
    Same,
    /// No padding; out = (in - k) / stride + 1.
    Valid,
}

/// Gradients of a convolution with respect to its three operands.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub d_input: Tensor,
    pub d_kernel: Tensor,
    pub d_bias: Tensor,
}

/// Gradients of a fully-connected layer.
#[derive(Debug, Clone)]
pub struct FcGrads {
    pub d_input: Tensor,
    pub d_weights: Tensor,
    pub d_bias: Tensor,
}

fn conv_geometry(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    groups: usize,
    padding: Padding,
) -> Result<ConvGeom> {
    let (c_in, h, w) = input.chw()?;
    let kshape = kernel.shape();
    if kshape.len() != 4 {
        return Err(Error::shape(format!(
            "conv kernel must be rank 4 (outCh x inChPerGroup x kH x kW), got {kshape:?}"
        )));
    }
    let (c_out, c_in_pg, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    if stride < 1 {
        return Err(Error::invalid("conv stride must be >= 1".to_string()));
    }
    if groups < 1 || c_in % groups != 0 {
        return Err(Error::shape(format!(
            "groups {groups} does not divide input channels {c_in}"
        )));
    }
    if c_out % groups != 0 {
        return Err(Error::shape(format!(
            "groups {groups} does not divide kernel out-channels {c_out}"
        )));
    }
    if c_in / groups != c_in_pg {
        return Err(Error::shape(format!(
            "kernel in-channels-per-group {c_in_pg} != input channels {c_in} / groups {groups}"
        )));
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape(format!(
            "bias shape {:?} != [out channels {c_out}]",
            bias.shape()
        )));
    }
    let (out_h, pad_top) = axis_geometry(h, kh, stride, padding)?;
    let (out_w, pad_left) = axis_geometry(w, kw, stride, padding)?;
    Ok(ConvGeom {
        h,
        w,
        c_out,
        c_in_pg,
        kh,
        kw,
        out_h,
        out_w,
        pad_top,
        pad_left,
        groups,
        stride,
    })
}

struct ConvGeom {
    h: usize,
    w: usize,
    c_out: usize,
    c_in_pg: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    pad_top: isize,
    pad_left: isize,
    groups: usize,
    stride: usize,
}

fn axis_geometry(len: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, isize)> {
    match padding {
        Padding::Valid => {
            if k > len {
                return Err(Error::shape(format!(
                    "kernel extent {k} exceeds input extent {len} under valid padding"
                )));
            }
            Ok(((len - k) / stride + 1, 0))
        }
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            Ok((out, (total / 2) as isize))
        }
    }
}

/// Grouped 2-D cross-correlation plus per-channel bias.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    groups: usize,
    padding: Padding,
) -> Result<Tensor> {
    let g = conv_geometry(input, kernel, bias, stride, groups, padding)?;
    let mut out = Tensor::zeros(vec![g.c_out, g.out_h, g.out_w]);
    let c_out_pg = g.c_out / g.groups;
    let kdata = kernel.data();
    let idata = input.data();
    let odata = out.data_mut();
    for oc in 0..g.c_out {
        let grp = oc / c_out_pg;
        let b = bias.data()[oc];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = b;
                let iy0 = (oy * g.stride) as isize - g.pad_top;
                let ix0 = (ox * g.stride) as isize - g.pad_left;
                for ic in 0..g.c_in_pg {
                    let in_ch = grp * g.c_in_pg + ic;
                    for ky in 0..g.kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let in_row = (in_ch * g.h + iy as usize) * g.w;
                        let k_row = ((oc * g.c_in_pg + ic) * g.kh + ky) * g.kw;
                        for kx in 0..g.kw {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            acc += idata[in_row + ix as usize] * kdata[k_row + kx];
                        }
                    }
                }
                odata[(oc * g.out_h + oy) * g.out_w + ox] = acc;
            }
        }
    }
    Ok(out)
}

/// Reverse-mode gradient of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_vjp(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    groups: usize,
    padding: Padding,
    upstream: &Tensor,
) -> Result<ConvGrads> {
    let g = conv_geometry(input, kernel, bias, stride, groups, padding)?;
    if upstream.shape() != [g.c_out, g.out_h, g.out_w] {
        return Err(Error::shape(format!(
            "upstream gradient shape {:?} != forward output shape {:?}",
            upstream.shape(),
            [g.c_out, g.out_h, g.out_w]
        )));
    }
    let mut d_input = Tensor::zeros(input.shape().to_vec());
    let mut d_kernel = Tensor::zeros(kernel.shape().to_vec());
    let mut d_bias = Tensor::zeros(vec![g.c_out]);
    let c_out_pg = g.c_out / g.groups;
    let idata = input.data();
    let kdata = kernel.data();
    let udata = upstream.data();
    for oc in 0..g.c_out {
        let grp = oc / c_out_pg;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let u = udata[(oc * g.out_h + oy) * g.out_w + ox];
                if u == 0.0 {
                    continue;
                }
                d_bias.data_mut()[oc] += u;
                let iy0 = (oy * g.stride) as isize - g.pad_top;
                let ix0 = (ox * g.stride) as isize - g.pad_left;
                for ic in 0..g.c_in_pg {
                    let in_ch = grp * g.c_in_pg + ic;
                    for ky in 0..g.kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let in_row = (in_ch * g.h + iy as usize) * g.w;
                        let k_row = ((oc * g.c_in_pg + ic) * g.kh + ky) * g.kw;
                        for kx in 0..g.kw {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            d_kernel.data_mut()[k_row + kx] += u * idata[in_row + ix as usize];
                            d_input.data_mut()[in_row + ix as usize] += u * kdata[k_row + kx];
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        d_input,
        d_kernel,
        d_bias,
    })
}

/// Interleave channel groups: channel g*(C/groups)+c moves to c*groups+g.
pub fn channel_shuffle(input: &Tensor, groups: usize) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::shape(format!(
            "channel count {c} not divisible by shuffle groups {groups}"
        )));
    }
    let per = c / groups;
    let plane = h * w;
    let mut out = Tensor::zeros(vec![c, h, w]);
    for g in 0..groups {
        for p in 0..per {
            let src = g * per + p;
            let dst = p * groups + g;
            out.data_mut()[dst * plane..(dst + 1) * plane]
                .copy_from_slice(&input.data()[src * plane..(src + 1) * plane]);
        }
    }
    Ok(out)
}

/// Gradient of channel_shuffle: apply the inverse permutation to the upstream.
pub fn channel_shuffle_vjp(upstream: &Tensor, groups: usize) -> Result<Tensor> {
    let (c, _, _) = upstream.chw()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::shape(format!(
            "channel count {c} not divisible by shuffle groups {groups}"
        )));
    }
    channel_shuffle(upstream, c / groups)
}

/// Per-channel arithmetic mean over the spatial plane; output Cx1x1.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let plane = h * w;
    let data = (0..c)
        .map(|ch| input.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new(vec![c, 1, 1], data)
}

pub fn global_avg_pool_vjp(input_shape: &[usize], upstream: &Tensor) -> Result<Tensor> {
    let (c, h, w) = match input_shape {
        [c, h, w] => (*c, *h, *w),
        _ => return Err(Error::shape(format!("expected CxHxW shape, got {input_shape:?}"))),
    };
    if upstream.shape() != [c, 1, 1] {
        return Err(Error::shape(format!(
            "upstream shape {:?} != pooled shape [{c}, 1, 1]",
            upstream.shape()
        )));
    }
    let plane = (h * w) as f64;
    let mut out = Tensor::zeros(vec![c, h, w]);
    for ch in 0..c {
        let g = upstream.data()[ch] / plane;
        for v in &mut out.data_mut()[ch * h * w..(ch + 1) * h * w] {
            *v = g;
        }
    }
    Ok(out)
}

/// Affine map over a 1-D input: out = W x + b, W is out x in.
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let x = flat_vector(input)?;
    let wshape = weights.shape();
    if wshape.len() != 2 {
        return Err(Error::shape(format!(
            "FC weights must be rank 2 (out x in), got {wshape:?}"
        )));
    }
    let (out_n, in_n) = (wshape[0], wshape[1]);
    if in_n != x.len() {
        return Err(Error::shape(format!(
            "FC weight columns {in_n} != input length {}",
            x.len()
        )));
    }
    if bias.shape() != [out_n] {
        return Err(Error::shape(format!(
            "FC bias shape {:?} != [out {out_n}]",
            bias.shape()
        )));
    }
    let data = (0..out_n)
        .map(|o| {
            let row = &weights.data()[o * in_n..(o + 1) * in_n];
            bias.data()[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect();
    Tensor::new(vec![out_n], data)
}

pub fn fully_connected_vjp(
    input: &Tensor,
    weights: &Tensor,
    upstream: &Tensor,
) -> Result<FcGrads> {
    let x = flat_vector(input)?;
    let (out_n, in_n) = (weights.shape()[0], weights.shape()[1]);
    if upstream.numel() != out_n {
        return Err(Error::shape(format!(
            "upstream length {} != FC output length {out_n}",
            upstream.numel()
        )));
    }
    let mut d_input = Tensor::zeros(input.shape().to_vec());
    let mut d_weights = Tensor::zeros(vec![out_n, in_n]);
    for o in 0..out_n {
        let u = upstream.data()[o];
        for i in 0..in_n {
            d_weights.data_mut()[o * in_n + i] = u * x[i];
            d_input.data_mut()[i] += u * weights.data()[o * in_n + i];
        }
    }
    Ok(FcGrads {
        d_input,
        d_weights,
        d_bias: Tensor::new(vec![out_n], upstream.data().to_vec())?,
    })
}

fn flat_vector(t: &Tensor) -> Result<&[f64]> {
    // A Cx1x1 pooled tensor is accepted as a vector of length C.
    if t.rank() == 1 || t.shape().iter().skip(1).all(|&e| e == 1) {
        Ok(t.data())
    } else {
        Err(Error::shape(format!(
            "expected a vector-like tensor, got shape {:?}",
            t.shape()
        )))
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor::from_fn(input.shape().to_vec(), |i| input.data()[i].max(0.0))
}

/// VJP of relu given the saved forward input.
pub fn relu_vjp(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if input.shape() != upstream.shape() {
        return Err(Error::shape("relu vjp shape mismatch".to_string()));
    }
    Ok(Tensor::from_fn(input.shape().to_vec(), |i| {
        if input.data()[i] > 0.0 {
            upstream.data()[i]
        } else {
            0.0
        }
    }))
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    Tensor::from_fn(input.shape().to_vec(), |i| {
        1.0 / (1.0 + (-input.data()[i]).exp())
    })
}

/// VJP of sigmoid given the saved forward *output*.
pub fn sigmoid_vjp(output: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if output.shape() != upstream.shape() {
        return Err(Error::shape("sigmoid vjp shape mismatch".to_string()));
    }
    Ok(Tensor::from_fn(output.shape().to_vec(), |i| {
        let s = output.data()[i];
        upstream.data()[i] * s * (1.0 - s)
    }))
}

/// Numerically stable softmax over a 1-D logit vector.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 1 {
        return Err(Error::shape(format!(
            "softmax expects a vector, got shape {:?}",
            logits.shape()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::Numeric("softmax input contains non-finite logits".to_string()));
    }
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Tensor::new(vec![logits.numel()], exps.iter().map(|e| e / sum).collect())
}

/// VJP of softmax given the saved forward output probabilities.
pub fn softmax_vjp(output: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if output.shape() != upstream.shape() {
        return Err(Error::shape("softmax vjp shape mismatch".to_string()));
    }
    let dot: f64 = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(p, g)| p * g)
        .sum();
    Ok(Tensor::from_fn(output.shape().to_vec(), |i| {
        output.data()[i] * (upstream.data()[i] - dot)
    }))
}

/// Multiply every spatial position of channel c by scales[c].
pub fn scale_channels(input: &Tensor, scales: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if scales.numel() != c {
        return Err(Error::shape(format!(
            "scales length {} != channel count {c}",
            scales.numel()
        )));
    }
    let plane = h * w;
    Ok(Tensor::from_fn(vec![c, h, w], |i| {
        input.data()[i] * scales.data()[i / plane]
    }))
}

/// Gradients of scale_channels with respect to input and scales.
pub fn scale_channels_vjp(
    input: &Tensor,
    scales: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = input.chw()?;
    if upstream.shape() != input.shape() {
        return Err(Error::shape("scale_channels vjp shape mismatch".to_string()));
    }
    let plane = h * w;
    let d_input = Tensor::from_fn(vec![c, h, w], |i| {
        upstream.data()[i] * scales.data()[i / plane]
    });
    let d_scales = Tensor::new(
        vec![c],
        (0..c)
            .map(|ch| {
                (0..plane)
                    .map(|p| upstream.data()[ch * plane + p] * input.data()[ch * plane + p])
                    .sum()
            })
            .collect(),
    )?;
    Ok((d_input, d_scales))
}

/// Replicate every pixel factor x factor.
pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 1 {
        return Err(Error::invalid("upsample factor must be >= 1".to_string()));
    }
    let (c, h, w) = input.chw()?;
    Ok(Tensor::from_fn(vec![c, h * factor, w * factor], |i| {
        let x = i % (w * factor);
        let y = (i / (w * factor)) % (h * factor);
        let ch = i / (w * factor * h * factor);
        input.at3(ch, y / factor, x / factor)
    }))
}

/// Gradient of upsample_nearest: sum upstream over each factor x factor cell.
pub fn upsample_nearest_vjp(input_shape: &[usize], factor: usize, upstream: &Tensor) -> Result<Tensor> {
    let (c, h, w) = match input_shape {
        [c, h, w] => (*c, *h, *w),
        _ => return Err(Error::shape(format!("expected CxHxW shape, got {input_shape:?}"))),
    };
    if upstream.shape() != [c, h * factor, w * factor] {
        return Err(Error::shape("upsample vjp shape mismatch".to_string()));
    }
    let mut out = Tensor::zeros(vec![c, h, w]);
    for ch in 0..c {
        for y in 0..h * factor {
            for x in 0..w * factor {
                *out.at3_mut(ch, y / factor, x / factor) += upstream.at3(ch, y, x);
            }
        }
    }
    Ok(out)
}

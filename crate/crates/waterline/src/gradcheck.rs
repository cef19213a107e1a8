//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compare an analytic gradient against central finite differences of a
/// scalar-valued function of one tensor operand.
///
/// Returns the worst per-element relative error, with denominator
/// max(|analytic|, |numeric|, 1e-6). The floor sits above the intrinsic
/// noise of central differences in f64 (~1e-11 absolute at eps = 1e-5),
/// so exact-zero gradients do not report spurious error.
pub fn finite_diff_check<F>(
    f: F,
    operand: &Tensor,
    eps: f64,
    analytic: &Tensor,
) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    if analytic.shape() != operand.shape() {
        return Err(Error::shape(format!(
            "analytic gradient shape {:?} != operand shape {:?}",
            analytic.shape(),
            operand.shape()
        )));
    }
    let mut probe = operand.clone();
    let mut worst = 0.0f64;
    for i in 0..operand.numel() {
        let saved = probe.data()[i];
        probe.data_mut()[i] = saved + eps;
        let plus = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = saved - eps;
        let minus = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = saved;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let out = f(x)?;
    if out.numel() != 1 {
        return Err(Error::shape(format!(
            "finite_diff_check requires a scalar-valued function, got output shape {:?}",
            out.shape()
        )));
    }
    Ok(out.data()[0])
}

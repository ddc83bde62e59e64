//! Central-difference verification of tape gradients.

use super::{KernelError, Tape, Var};
use crate::tensor::Tensor;

/// Magnitude below which gradient entries are compared on an absolute scale.
///
/// Central differences with `h = 1e-5` carry rounding noise of roughly
/// `ε·|loss|/h ≈ 1e-10`, so relative errors on entries much smaller than this
/// floor measure noise rather than the reverse rule.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(leaf, flat entry)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

/// Central differences of `f` around `point`, one entry at a time.
pub fn finite_difference<F>(f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + h;
            let plus = f(&x);
            x[i] = point[i] - h;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

fn eval<F>(loss_fn: &F, leaves: &[Tensor]) -> Result<f64, KernelError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, KernelError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
    let out = loss_fn(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.shape() != (1, 1) {
        return Err(KernelError::NotScalar(v.rows(), v.cols()));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(KernelError::NonFinite { op: "loss" });
    }
    Ok(v)
}

/// Compares tape gradients of a scalar `loss_fn` against central differences
/// with step `h` for every entry of every leaf.
///
/// Relative error per entry is `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn grad_check<F>(loss_fn: F, leaves: &[Tensor], h: f64) -> Result<GradCheckReport, KernelError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, KernelError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
    let out = loss_fn(&mut tape, &vars)?;
    if !tape.value(out).is_finite() {
        return Err(KernelError::NonFinite { op: "loss" });
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let mut numeric = Vec::with_capacity(leaves.len());
    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    let mut work = leaves.to_vec();
    for li in 0..leaves.len() {
        let mut num = Tensor::zeros(leaves[li].rows(), leaves[li].cols());
        for k in 0..leaves[li].len() {
            let x0 = leaves[li].data()[k];
            work[li].data_mut()[k] = x0 + h;
            let plus = eval(&loss_fn, &work)?;
            work[li].data_mut()[k] = x0 - h;
            let minus = eval(&loss_fn, &work)?;
            work[li].data_mut()[k] = x0;
            let n = (plus - minus) / (2.0 * h);
            num.data_mut()[k] = n;
            let a = analytic[li].data()[k];
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_ERROR_FLOOR);
            if worst.is_none() || rel > max_rel_error {
                max_rel_error = rel;
                worst = Some((li, k));
            }
        }
        numeric.push(num);
    }
    Ok(GradCheckReport { max_rel_error, worst, analytic, numeric })
}

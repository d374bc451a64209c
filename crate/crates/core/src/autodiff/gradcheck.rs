use ndarray::Array2;

use super::params::{BoundParams, ParamStore};
use super::tape::{Tape, Tensor};
use crate::error::{Result, SeaError};

pub const DEFAULT_STEP: f64 = 1e-5;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval_scalar<F>(f: &F, x: &Array2<f64>) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Tensor<'t>) -> Result<Tensor<'t>>,
{
    let tape = Tape::new();
    let y = f(&tape, tape.constant(x.clone()))?;
    let v = y.item();
    if !v.is_finite() {
        return Err(SeaError::NonFinite { op: "gradcheck" });
    }
    Ok(v)
}

/// Largest relative error between the tape gradient of `f` at `x` and
/// central differences with step `h`, over all coordinates.
///
/// Relative error is `|a - n| / max(1, |a|, |n|)`.
pub fn finite_diff_gradcheck<F>(f: F, x: &Array2<f64>, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Tensor<'t>) -> Result<Tensor<'t>>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let y = f(&tape, leaf)?;
    let analytic = tape.backward(y)?.get(leaf);

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[(r, c)];
        probe[(r, c)] = orig + h;
        let plus = eval_scalar(&f, &probe)?;
        probe[(r, c)] = orig - h;
        let minus = eval_scalar(&f, &probe)?;
        probe[(r, c)] = orig;
        worst = worst.max(rel_err(analytic[(r, c)], (plus - minus) / (2.0 * h)));
    }
    Ok(worst)
}

/// [`finite_diff_gradcheck`] over every scalar of every parameter in `params`.
pub fn gradcheck_params<F>(f: F, params: &ParamStore, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Tensor<'t>>,
{
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let y = f(&tape, &bound)?;
    let analytic = bound.grads(&tape.backward(y)?);

    let eval = |p: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let b = p.bind(&tape);
        let v = f(&tape, &b)?.item();
        if !v.is_finite() {
            return Err(SeaError::NonFinite { op: "gradcheck" });
        }
        Ok(v)
    };

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for id in params.ids() {
        let cols = params.get(id).ncols();
        for idx in 0..params.get(id).len() {
            let (r, c) = (idx / cols, idx % cols);
            let orig = probe.get(id)[(r, c)];
            probe.get_mut(id)[(r, c)] = orig + h;
            let plus = eval(&probe)?;
            probe.get_mut(id)[(r, c)] = orig - h;
            let minus = eval(&probe)?;
            probe.get_mut(id)[(r, c)] = orig;
            worst = worst.max(rel_err(
                analytic[id.index()][(r, c)],
                (plus - minus) / (2.0 * h),
            ));
        }
    }
    Ok(worst)
}

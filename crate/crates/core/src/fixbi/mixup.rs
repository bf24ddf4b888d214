use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Convex source/target mixture with its mixed labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MixupBatch {
    pub x_mix: Tensor,
    pub y_mix: Tensor,
    pub lambda_used: f64,
}

/// The pair `(a, b)` with `b = fl(1−λ)`, `a = fl(1−b)`; `a + b == 1` exactly
/// and each differs from `λ`, `1−λ` by at most one rounding.
fn mixing_weights(lambda: f64) -> (f64, f64) {
    let b = 1.0 - lambda;
    (1.0 - b, b)
}

/// `λ·a + (1−λ)·b`, kept inside `[min(a,b), max(a,b)]` against rounding.
#[inline]
fn blend(wa: f64, a: f64, wb: f64, b: f64) -> f64 {
    let v = wa * a + wb * b;
    v.clamp(a.min(b), a.max(b))
}

/// Mixes features and label rows sample-by-sample with ratio `lambda`.
pub fn mixup(xs: &Tensor, ys: &Tensor, xt: &Tensor, yt: &Tensor, lambda: f64) -> Result<MixupBatch> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("mixup ratio must lie in [0, 1], got {lambda}")));
    }
    if xs.shape() != xt.shape() {
        return Err(Error::shape(format!(
            "source batch {:?} and target batch {:?} differ",
            xs.shape(),
            xt.shape()
        )));
    }
    if ys.shape() != yt.shape() || ys.rows() != xs.rows() {
        return Err(Error::shape(format!(
            "label batches {:?} / {:?} do not match {} samples",
            ys.shape(),
            yt.shape(),
            xs.rows()
        )));
    }
    let (ws, wt) = mixing_weights(lambda);
    let x_mix = xs.zip_map(xt, |a, b| blend(ws, a, wt, b))?;
    let y_mix = ys.zip_map(yt, |a, b| blend(ws, a, wt, b))?;
    Ok(MixupBatch {
        x_mix,
        y_mix,
        lambda_used: lambda,
    })
}

//! Training losses on soft predictions in `[0, 1]`.
//!
//! Dice is computed over the whole tensor (every pixel of every batch item
//! pooled), with smoothing constant 1 and the elementwise product as the
//! soft intersection. All sums run in f64 regardless of the scalar type.

use crate::error::Result;
use crate::ops::{sobel_gradient_magnitude, sobel_gradient_magnitude_backward};
use crate::real::Real;
use crate::tensor::Tensor4;

pub const DICE_SMOOTH: f64 = 1.0;

/// Weights of the dice and boundary terms in [`combined_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub dice: f64,
    pub boundary: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { dice: 0.9, boundary: 0.1 }
    }
}

/// Component values of one combined-loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub dice: f64,
    pub boundary: f64,
}

fn sums<R: Real>(y_true: &Tensor4<R>, y_pred: &Tensor4<R>) -> Result<(f64, f64)> {
    y_true.require_same_dims(y_pred, "dice")?;
    let mut inter = 0.0;
    let mut total = 0.0;
    for (&t, &p) in y_true.data().iter().zip(y_pred.data()) {
        let (t, p) = (t.as_f64(), p.as_f64());
        inter += t * p;
        total += t + p;
    }
    Ok((inter, total))
}

/// `(2·Σ t·p + 1) / (Σ t + Σ p + 1)`.
pub fn dice_score<R: Real>(y_true: &Tensor4<R>, y_pred: &Tensor4<R>) -> Result<f64> {
    let (inter, total) = sums(y_true, y_pred)?;
    Ok((2.0 * inter + DICE_SMOOTH) / (total + DICE_SMOOTH))
}

pub fn dice_loss<R: Real>(y_true: &Tensor4<R>, y_pred: &Tensor4<R>) -> Result<f64> {
    Ok(1.0 - dice_score(y_true, y_pred)?)
}

/// Dice loss and its gradient with respect to `y_pred`.
pub fn dice_loss_grad<R: Real>(y_true: &Tensor4<R>, y_pred: &Tensor4<R>) -> Result<(f64, Tensor4<R>)> {
    let (inter, total) = sums(y_true, y_pred)?;
    let num = 2.0 * inter + DICE_SMOOTH;
    let den = total + DICE_SMOOTH;
    // d(num/den)/dp_i = (2 t_i · den − num) / den²
    let grad = y_true.map(|t| R::lit(-(2.0 * t.as_f64() * den - num) / (den * den)));
    Ok((1.0 - num / den, grad))
}

/// Mean absolute difference of Sobel gradient magnitudes.
pub fn boundary_loss<R: Real>(y_true: &Tensor4<R>, y_pred: &Tensor4<R>) -> Result<f64> {
    y_true.require_same_dims(y_pred, "boundary loss")?;
    let mt = sobel_gradient_magnitude(y_true)?;
    let mp = sobel_gradient_magnitude(y_pred)?;
    let s: f64 = mt.data().iter().zip(mp.data()).map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs()).sum();
    Ok(s / mt.len() as f64)
}

/// Boundary loss and its gradient with respect to `y_pred`. The subgradient
/// of `|·|` at zero is taken as zero.
pub fn boundary_loss_grad<R: Real>(y_true: &Tensor4<R>, y_pred: &Tensor4<R>) -> Result<(f64, Tensor4<R>)> {
    y_true.require_same_dims(y_pred, "boundary loss")?;
    let mt = sobel_gradient_magnitude(y_true)?;
    let mp = sobel_gradient_magnitude(y_pred)?;
    let n = mt.len() as f64;
    let s: f64 = mt.data().iter().zip(mp.data()).map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs()).sum();
    // ∂|a − b|/∂b = −sign(a − b)
    let g_mag = mt.zip_map(&mp, |a, b| {
        let d = a.as_f64() - b.as_f64();
        R::lit(if d > 0.0 { -1.0 / n } else if d < 0.0 { 1.0 / n } else { 0.0 })
    })?;
    let grad = sobel_gradient_magnitude_backward(y_pred, &g_mag)?;
    Ok((s / n, grad))
}

pub fn combined_loss<R: Real>(y_true: &Tensor4<R>, y_pred: &Tensor4<R>, w: LossWeights) -> Result<LossValue> {
    let dice = dice_loss(y_true, y_pred)?;
    let boundary = boundary_loss(y_true, y_pred)?;
    Ok(LossValue { total: w.dice * dice + w.boundary * boundary, dice, boundary })
}

/// Combined loss and `w.dice·∇dice + w.boundary·∇boundary`.
pub fn combined_loss_grad<R: Real>(
    y_true: &Tensor4<R>,
    y_pred: &Tensor4<R>,
    w: LossWeights,
) -> Result<(LossValue, Tensor4<R>)> {
    let (dice, gd) = dice_loss_grad(y_true, y_pred)?;
    let (boundary, gb) = boundary_loss_grad(y_true, y_pred)?;
    let (wd, wb) = (R::lit(w.dice), R::lit(w.boundary));
    let grad = gd.zip_map(&gb, |a, b| wd * a + wb * b)?;
    Ok((LossValue { total: w.dice * dice + w.boundary * boundary, dice, boundary }, grad))
}

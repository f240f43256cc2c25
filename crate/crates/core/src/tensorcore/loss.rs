//! Binary cross-entropy and soft Dice, each with its analytic gradient.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Probability clamp used by [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

fn same_shape<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::of(BCE_EPS);
    p.max(eps).min(T::one() - eps)
}

/// Mean binary cross-entropy over every element.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    same_shape(pred, target)?;
    let n = T::of(pred.len() as f64);
    let total: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
        })
        .sum();
    Ok(total / n)
}

/// Gradient of [`bce_loss`] with respect to the probabilities, evaluated at
/// the clamped probability.
pub fn bce_loss_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(pred, target)?;
    let n = T::of(pred.len() as f64);
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            (p - y) / (p * (T::one() - p) * n)
        })
        .collect();
    Tensor::new(pred.shape(), data)
}

/// Gradient of `bce_loss(sigmoid(z), y)` with respect to the logits `z`,
/// given `probs = sigmoid(z)`. Stays informative where the sigmoid saturates.
pub fn bce_logits_grad<T: Scalar>(probs: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(probs, target)?;
    let n = T::of(probs.len() as f64);
    let data = probs
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| (p - y) / n)
        .collect();
    Tensor::new(probs.shape(), data)
}

fn dice_terms<T: Scalar>(p: &[T], y: &[T]) -> (T, T) {
    let inter = p.iter().zip(y).map(|(&a, &b)| a * b).sum();
    let total = p.iter().copied().sum::<T>() + y.iter().copied().sum::<T>();
    (inter, total)
}

/// `1 - (2 sum(p y) + smooth) / (sum p + sum y + smooth)` per batch item,
/// averaged over the batch.
pub fn soft_dice_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, smooth: T) -> Result<T> {
    same_shape(pred, target)?;
    let n = pred.batch();
    let mut loss = T::zero();
    for b in 0..n {
        let (inter, total) = dice_terms(pred.item(b), target.item(b));
        loss += T::one() - (T::of(2.0) * inter + smooth) / (total + smooth);
    }
    Ok(loss / T::of(n as f64))
}

pub fn soft_dice_grad<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    smooth: T,
) -> Result<Tensor<T>> {
    same_shape(pred, target)?;
    let n = pred.batch();
    let scale = T::one() / T::of(n as f64);
    let two = T::of(2.0);
    let mut grad = Tensor::zeros(pred.shape());
    for b in 0..n {
        let (inter, total) = dice_terms(pred.item(b), target.item(b));
        let num = two * inter + smooth;
        let den = total + smooth;
        let y = target.item(b);
        for (g, &yi) in grad.item_mut(b).iter_mut().zip(y) {
            *g = -scale * (two * yi * den - num) / (den * den);
        }
    }
    Ok(grad)
}

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`]; the subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    assert_eq!(input.shape(), grad_out.shape(), "relu gradient shape");
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data).expect("same shape")
}

fn logistic<T: Scalar>(x: T) -> T {
    let one = T::one();
    let s = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    // keep the output strictly inside (0, 1) even where it saturates
    s.max(T::min_positive_value())
        .min(one - T::epsilon() / T::of(2.0))
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(logistic)
}

/// Gradient of [`sigmoid`] expressed through its output.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    assert_eq!(output.shape(), grad_out.shape(), "sigmoid gradient shape");
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::new(output.shape(), data).expect("same shape")
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [na, ca, ha, wa] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::SpatialMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..na {
        data.extend_from_slice(a.item(n));
        data.extend_from_slice(b.item(n));
    }
    Tensor::new([na, ca + cb, ha, wa], data)
}

/// Splits a tensor after its first `first` channels.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = t.shape();
    if first == 0 || first >= c {
        return Err(Error::ShapeMismatch(format!(
            "cannot split {c} channels after {first}"
        )));
    }
    let cut = first * h * w;
    let mut a = Vec::with_capacity(n * cut);
    let mut b = Vec::with_capacity(t.len() - n * cut);
    for i in 0..n {
        let item = t.item(i);
        a.extend_from_slice(&item[..cut]);
        b.extend_from_slice(&item[cut..]);
    }
    Ok((
        Tensor::new([n, first, h, w], a)?,
        Tensor::new([n, c - first, h, w], b)?,
    ))
}

/// Splits the gradient of a concatenation back onto its two operands.
pub fn concat_channels_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    a_channels: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    split_channels(grad_out, a_channels)
}

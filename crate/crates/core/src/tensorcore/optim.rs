use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Trainable tensor with its gradient and Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
    pub step_count: u64,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let shape = value.shape();
        Self {
            value,
            grad: None,
            adam_m: Tensor::zeros(shape),
            adam_v: Tensor::zeros(shape),
            step_count: 0,
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate(&mut self, g: &[T]) {
        let shape = self.shape();
        let buf = self.grad.get_or_insert_with(|| Tensor::zeros(shape));
        assert_eq!(buf.len(), g.len(), "gradient length");
        for (a, &b) in buf.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(param: &mut Parameter<T>, cfg: &AdamConfig) -> Result<()> {
    let grad = param.grad.as_ref().ok_or(Error::MissingGradient)?;
    param.step_count += 1;
    let t = param.step_count as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powi(t));
    let c2 = T::of(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    let one = T::one();
    let values = param.value.data_mut();
    let ms = param.adam_m.data_mut();
    let vs = param.adam_v.data_mut();
    for (((theta, m), v), &g) in values.iter_mut().zip(ms).zip(vs).zip(grad.data()) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

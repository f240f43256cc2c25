//! A small, deterministic tensor engine with exactly the layers the UNet needs.
//!
//! There is no dynamic graph: every layer is a pair of free functions, a
//! forward pass and a backward pass that takes whatever the forward pass
//! cached. The model in [`crate::unet`] wires them together by hand.
//!
//! Everything is generic over [`Scalar`] so the same code trains in `f32` and
//! is gradient-checked in `f64`.

mod activation;
pub mod checkpoint;
mod conv;
mod gradcheck;
mod loss;
mod optim;
mod pool;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use activation::{
    concat_channels, concat_channels_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    split_channels,
};
pub use conv::{
    conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, Conv2dGrads,
    ConvTransposeGrads,
};
pub use gradcheck::{grad_check, relative_error};
pub use loss::{bce_logits_grad, bce_loss, bce_loss_grad, soft_dice_grad, soft_dice_loss, BCE_EPS};
pub use optim::{adam_step, AdamConfig, Parameter};
pub use pool::{maxpool2d, maxpool2d_backward, MaxPool};

/// Floating-point element type with a matching GEMM kernel.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// The strides must describe in-bounds views of `m x k`, `k x n` and `m x n`
    /// matrices over the given pointers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major matrix product `c (+)= op(a) * op(b)` where `op` optionally
/// transposes. `a` is stored as `m x k` (or `k x m` when `trans_a`), `b` as
/// `k x n` (or `n x k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "lhs length");
    assert_eq!(b.len(), k * n, "rhs length");
    assert_eq!(c.len(), m * n, "output length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths checked above match the strides chosen for each layout.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Rank-4 `[batch, channels, height, width]` array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!("zero-sized dim in {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dim in {shape:?}");
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize) -> T) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dim in {shape:?}");
        let len = shape.iter().product();
        Self {
            shape,
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let [_, cs, h, w] = self.shape;
        self.data[((n * cs + c) * h + y) * w + x]
    }

    /// Elements of one `[channels, height, width]` batch item.
    pub fn item(&self, n: usize) -> &[T] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[n * stride..(n + 1) * stride]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::of(v.to_f64().expect("finite")))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "shape mismatch in add_assign");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }
}

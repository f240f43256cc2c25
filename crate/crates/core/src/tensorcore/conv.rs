//! 2-D convolution (cross-correlation, no kernel flip) via im2col + GEMM, and
//! the 2x2 stride-2 transposed convolution used for up-sampling.

use super::{matmul, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    in_c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(input: [usize; 4], weight: [usize; 4], pad: usize, stride: usize) -> Result<Self> {
        let [_, in_c, h, w] = input;
        let [_, w_in, kh, kw] = weight;
        if in_c != w_in {
            return Err(Error::ShapeMismatch(format!(
                "input has {in_c} channels, kernel expects {w_in}"
            )));
        }
        if stride == 0 {
            return Err(Error::ShapeMismatch("stride must be positive".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::ShapeMismatch(format!(
                "kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"
            )));
        }
        Ok(Self {
            in_c,
            h,
            w,
            kh,
            kw,
            pad,
            stride,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0 && self.stride == 1
    }

    /// Output positions `o` whose source `o*stride + k - pad` lands in `0..len`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        // largest o with o*s + k - p <= len - 1
        let hi = if len + p > k {
            ((len + p - k - 1) / s + 1).min(out_len)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Lowers output rows `oy0..oy1` of one image to a `rows x ((oy1-oy0)*ow)` matrix.
fn im2col<T: Scalar>(src: &[T], g: &Geometry, oy0: usize, oy1: usize, cols: &mut [T]) {
    let n_cols = (oy1 - oy0) * g.ow;
    for c in 0..g.in_c {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (y_lo, y_hi) = g.valid_range(ki, g.h, g.oh);
            let (y_lo, y_hi) = (y_lo.clamp(oy0, oy1), y_hi.clamp(oy0, oy1));
            for kj in 0..g.kw {
                let (x_lo, x_hi) = g.valid_range(kj, g.w, g.ow);
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                dst[..(y_lo - oy0) * g.ow].fill(T::zero());
                dst[(y_hi - oy0) * g.ow..].fill(T::zero());
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let line = &plane[iy * g.w..(iy + 1) * g.w];
                    let out = &mut dst[(oy - oy0) * g.ow..(oy - oy0 + 1) * g.ow];
                    out[..x_lo].fill(T::zero());
                    out[x_hi..].fill(T::zero());
                    if g.stride == 1 {
                        let ix0 = x_lo + kj - g.pad;
                        out[x_lo..x_hi].copy_from_slice(&line[ix0..ix0 + (x_hi - x_lo)]);
                    } else {
                        for ox in x_lo..x_hi {
                            out[ox] = line[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds the lowered rows back into `dst`.
fn col2im<T: Scalar>(cols: &[T], g: &Geometry, oy0: usize, oy1: usize, dst: &mut [T]) {
    let n_cols = (oy1 - oy0) * g.ow;
    for c in 0..g.in_c {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (y_lo, y_hi) = g.valid_range(ki, g.h, g.oh);
            let (y_lo, y_hi) = (y_lo.clamp(oy0, oy1), y_hi.clamp(oy0, oy1));
            for kj in 0..g.kw {
                let (x_lo, x_hi) = g.valid_range(kj, g.w, g.ow);
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * n_cols..(row + 1) * n_cols];
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let line = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let from = &src[(oy - oy0) * g.ow..(oy - oy0 + 1) * g.ow];
                    if g.stride == 1 {
                        let ix0 = x_lo + kj - g.pad;
                        let to = &mut line[ix0..ix0 + (x_hi - x_lo)];
                        for (t, &f) in to.iter_mut().zip(&from[x_lo..x_hi]) {
                            *t += f;
                        }
                    } else {
                        for ox in x_lo..x_hi {
                            line[ox * g.stride + kj - g.pad] += from[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Output rows per im2col slab, sized so a slab stays cache resident.
fn tile_rows(g: &Geometry) -> usize {
    const SLAB_ELEMS: usize = 1 << 16;
    (SLAB_ELEMS / (g.rows() * g.ow).max(1)).clamp(1, g.oh)
}

/// `c[:, off..off+n] (+)= a * b` where `a` is `m x k` (optionally stored
/// transposed), `b` is `k x n` with row stride `ldb`, and `c` has row stride
/// `ldc`.
#[allow(clippy::too_many_arguments)]
fn gemm_block<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
    accumulate: bool,
) {
    assert!(a.len() >= m * k);
    assert!(k == 0 || b.len() >= (k - 1) * ldb + n);
    assert!(m == 0 || c.len() >= (m - 1) * ldc + n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above bound every element addressed by these strides.
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
            ldb as isize,
            1,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// `c (+)= a * b^T` where `a` is `m x k` with row stride `lda` and `b` is
/// `n x k` with row stride `ldb`; `c` is dense `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm_nt<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
) {
    assert!(m == 0 || a.len() >= (m - 1) * lda + k);
    assert!(n == 0 || b.len() >= (n - 1) * ldb + k);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every element addressed by these strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            lda as isize,
            1,
            b.as_ptr(),
            1,
            ldb as isize,
            T::one(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_bias<T>(bias: &[T], out_c: usize) -> Result<()> {
    if bias.len() != out_c {
        return Err(Error::ShapeMismatch(format!(
            "bias has {} entries for {out_c} output channels",
            bias.len()
        )));
    }
    Ok(())
}

/// Cross-correlates `input [N, C, H, W]` with `weight [O, C, kH, kW]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    padding: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input.shape(), weight.shape(), padding, stride)?;
    let out_c = weight.shape()[0];
    check_bias(bias, out_c)?;
    let n = input.batch();
    let mut out = Tensor::zeros([n, out_c, g.oh, g.ow]);
    let tile = tile_rows(&g);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.rows() * tile * g.ow]
    };
    for b in 0..n {
        let src = input.item(b);
        let dst = out.item_mut(b);
        for (o, plane) in dst.chunks_exact_mut(g.cols()).enumerate() {
            plane.fill(bias[o]);
        }
        if g.is_pointwise() {
            matmul(
                out_c,
                g.rows(),
                g.cols(),
                weight.data(),
                false,
                src,
                false,
                dst,
                true,
            );
            continue;
        }
        for oy0 in (0..g.oh).step_by(tile) {
            let oy1 = (oy0 + tile).min(g.oh);
            let width = (oy1 - oy0) * g.ow;
            let slab = &mut cols[..g.rows() * width];
            im2col(src, &g, oy0, oy1, slab);
            let off = oy0 * g.ow;
            gemm_block(
                out_c,
                g.rows(),
                width,
                weight.data(),
                false,
                slab,
                width,
                &mut dst[off..],
                g.cols(),
                true,
            );
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: usize,
    stride: usize,
) -> Result<Conv2dGrads<T>> {
    let g = Geometry::new(input.shape(), weight.shape(), padding, stride)?;
    let out_c = weight.shape()[0];
    let n = input.batch();
    if grad_out.shape() != [n, out_c, g.oh, g.ow] {
        return Err(Error::ShapeMismatch(format!(
            "output gradient {:?}, expected {:?}",
            grad_out.shape(),
            [n, out_c, g.oh, g.ow]
        )));
    }
    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weight = Tensor::zeros(weight.shape());
    let mut grad_bias = vec![T::zero(); out_c];
    let tile = tile_rows(&g);
    let slab_len = if g.is_pointwise() {
        0
    } else {
        g.rows() * tile * g.ow
    };
    let mut cols = vec![T::zero(); slab_len];
    let mut grad_cols = vec![T::zero(); slab_len];
    for b in 0..n {
        let go = grad_out.item(b);
        for (o, plane) in go.chunks_exact(g.cols()).enumerate() {
            grad_bias[o] += plane.iter().copied().sum::<T>();
        }
        if g.is_pointwise() {
            matmul(
                out_c,
                g.cols(),
                g.rows(),
                go,
                false,
                input.item(b),
                true,
                grad_weight.data_mut(),
                true,
            );
            matmul(
                g.rows(),
                out_c,
                g.cols(),
                weight.data(),
                true,
                go,
                false,
                grad_input.item_mut(b),
                false,
            );
            continue;
        }
        for oy0 in (0..g.oh).step_by(tile) {
            let oy1 = (oy0 + tile).min(g.oh);
            let width = (oy1 - oy0) * g.ow;
            let off = oy0 * g.ow;
            let slab = &mut cols[..g.rows() * width];
            im2col(input.item(b), &g, oy0, oy1, slab);
            // dW += dY * cols^T
            gemm_nt(
                out_c,
                width,
                g.rows(),
                &go[off..],
                g.cols(),
                slab,
                width,
                grad_weight.data_mut(),
            );
            // dcols = W^T * dY
            let gslab = &mut grad_cols[..g.rows() * width];
            gemm_block(
                g.rows(),
                out_c,
                width,
                weight.data(),
                true,
                &go[off..],
                g.cols(),
                gslab,
                width,
                false,
            );
            col2im(gslab, &g, oy0, oy1, grad_input.item_mut(b));
        }
    }
    Ok(Conv2dGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

fn transpose_dims(input: [usize; 4], weight: [usize; 4]) -> Result<(usize, usize, usize, usize)> {
    let [_, in_c, h, w] = input;
    let [w_in, out_c, kh, kw] = weight;
    if (kh, kw) != (2, 2) {
        return Err(Error::ShapeMismatch(format!(
            "transposed conv expects a 2x2 kernel, got {kh}x{kw}"
        )));
    }
    if w_in != in_c {
        return Err(Error::ShapeMismatch(format!(
            "input has {in_c} channels, kernel expects {w_in}"
        )));
    }
    Ok((in_c, out_c, h, w))
}

/// 2x2, stride-2 transposed convolution: `input [N, C, H, W]`,
/// `weight [C, O, 2, 2]` to output `[N, O, 2H, 2W]`.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>> {
    let (in_c, out_c, h, w) = transpose_dims(input.shape(), weight.shape())?;
    check_bias(bias, out_c)?;
    let n = input.batch();
    let hw = h * w;
    let mut out = Tensor::zeros([n, out_c, 2 * h, 2 * w]);
    let mut tmp = vec![T::zero(); out_c * 4 * hw];
    for b in 0..n {
        // tmp[(o, ki, kj), (i, j)] = sum_c W[c, (o, ki, kj)] * X[c, (i, j)]
        matmul(
            out_c * 4,
            in_c,
            hw,
            weight.data(),
            true,
            input.item(b),
            false,
            &mut tmp,
            false,
        );
        let dst = out.item_mut(b);
        for o in 0..out_c {
            let plane = &mut dst[o * 4 * hw..(o + 1) * 4 * hw];
            for k in 0..4 {
                let (ki, kj) = (k / 2, k % 2);
                let src = &tmp[(o * 4 + k) * hw..(o * 4 + k + 1) * hw];
                for i in 0..h {
                    let row = &mut plane[(2 * i + ki) * 2 * w..(2 * i + ki + 1) * 2 * w];
                    for j in 0..w {
                        row[2 * j + kj] = src[i * w + j] + bias[o];
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvTransposeGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvTransposeGrads<T>> {
    let (in_c, out_c, h, w) = transpose_dims(input.shape(), weight.shape())?;
    let n = input.batch();
    if grad_out.shape() != [n, out_c, 2 * h, 2 * w] {
        return Err(Error::ShapeMismatch(format!(
            "output gradient {:?}, expected {:?}",
            grad_out.shape(),
            [n, out_c, 2 * h, 2 * w]
        )));
    }
    let hw = h * w;
    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weight = Tensor::zeros(weight.shape());
    let mut grad_bias = vec![T::zero(); out_c];
    let mut gtmp = vec![T::zero(); out_c * 4 * hw];
    for b in 0..n {
        let go = grad_out.item(b);
        for o in 0..out_c {
            let plane = &go[o * 4 * hw..(o + 1) * 4 * hw];
            grad_bias[o] += plane.iter().copied().sum::<T>();
            for k in 0..4 {
                let (ki, kj) = (k / 2, k % 2);
                let dst = &mut gtmp[(o * 4 + k) * hw..(o * 4 + k + 1) * hw];
                for i in 0..h {
                    let row = &plane[(2 * i + ki) * 2 * w..(2 * i + ki + 1) * 2 * w];
                    for j in 0..w {
                        dst[i * w + j] = row[2 * j + kj];
                    }
                }
            }
        }
        // dX = W * gtmp
        matmul(
            in_c,
            out_c * 4,
            hw,
            weight.data(),
            false,
            &gtmp,
            false,
            grad_input.item_mut(b),
            false,
        );
        // dW += X * gtmp^T
        matmul(
            in_c,
            hw,
            out_c * 4,
            input.item(b),
            false,
            &gtmp,
            true,
            grad_weight.data_mut(),
            true,
        );
    }
    Ok(ConvTransposeGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

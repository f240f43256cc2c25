use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Output of a 2x2 max pool plus the flat input index of each window's winner.
#[derive(Debug, Clone)]
pub struct MaxPool<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// 2x2, stride-2 max pooling. Ties go to the first element of the window in
/// row-major order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>) -> Result<MaxPool<T>> {
    let [n, c, h, w] = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddDimension {
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let top = base + 2 * y * w + 2 * x;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok(MaxPool {
        output: Tensor::new([n, c, oh, ow], out)?,
        argmax,
    })
}

/// Routes each pooled gradient back to its window's winning position.
pub fn maxpool2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: [usize; 4],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients for {} pooled positions",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    Ok(grad)
}

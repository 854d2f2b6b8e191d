//! Numeric kernels shared by the layers: matrix product, 2-D cross-correlation
//! over NHWC tensors (im2col + GEMM), and max pooling with argmax routing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `a[m x k] * b[k x n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![T::zero(); m * n];
    T::gemm(false, false, m, k, n, a.data(), b.data(), &mut out, false);
    Ok(Tensor::from_parts(vec![m, n], out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Output length and leading pad along one spatial axis.
pub fn conv_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 || kernel == 0 {
        return Err(Error::InvalidArgument("kernel and stride must be positive".into()));
    }
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(Error::Shape(format!(
                    "kernel {kernel} larger than input {input} with valid padding"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            // floor before, ceil after
            Ok((out, total / 2))
        }
    }
}

/// Precomputed index arithmetic for one conv2d call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    /// `sample_shape` is `[h, w, cin]`, `kernel_shape` is `[kh, kw, cin, cout]`.
    pub fn new(
        sample_shape: &[usize],
        kernel_shape: &[usize],
        padding: Padding,
        stride: (usize, usize),
    ) -> Result<Self> {
        if sample_shape.len() != 3 || kernel_shape.len() != 4 || sample_shape[2] != kernel_shape[2]
        {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: sample_shape.to_vec(),
                right: kernel_shape.to_vec(),
            });
        }
        let (out_h, pad_top) = conv_output_len(sample_shape[0], kernel_shape[0], stride.0, padding)?;
        let (out_w, pad_left) =
            conv_output_len(sample_shape[1], kernel_shape[1], stride.1, padding)?;
        Ok(ConvGeometry {
            in_h: sample_shape[0],
            in_w: sample_shape[1],
            cin: sample_shape[2],
            kh: kernel_shape[0],
            kw: kernel_shape[1],
            cout: kernel_shape[3],
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.in_h * self.in_w * self.cin
    }

    /// Samples per im2col chunk, bounding the column buffer to ~4M entries.
    fn chunk(&self) -> usize {
        const BUDGET: usize = 1 << 22;
        (BUDGET / (self.out_pixels() * self.patch_len()).max(1)).max(1)
    }

    /// Input offset of patch element `(ky, kx)` for output `(oy, ox)`, if in bounds.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.stride.0 + ky).checked_sub(self.pad_top)?;
        let x = (ox * self.stride.1 + kx).checked_sub(self.pad_left)?;
        (y < self.in_h && x < self.in_w).then(|| (y * self.in_w + x) * self.cin)
    }

    fn im2col<T: Scalar>(&self, input: &[T], cols: &mut [T]) {
        let plen = self.patch_len();
        for (s, sample) in input.chunks_exact(self.in_len()).enumerate() {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let row = (s * self.out_pixels() + oy * self.out_w + ox) * plen;
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let dst = row + (ky * self.kw + kx) * self.cin;
                            let dst = &mut cols[dst..dst + self.cin];
                            match self.source(oy, ox, ky, kx) {
                                Some(src) => dst.copy_from_slice(&sample[src..src + self.cin]),
                                None => dst.fill(T::zero()),
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dinput: &mut [T]) {
        let plen = self.patch_len();
        for (s, sample) in dinput.chunks_exact_mut(self.in_len()).enumerate() {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let row = (s * self.out_pixels() + oy * self.out_w + ox) * plen;
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            if let Some(dst) = self.source(oy, ox, ky, kx) {
                                let src = row + (ky * self.kw + kx) * self.cin;
                                for c in 0..self.cin {
                                    sample[dst + c] += cols[src + c];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip) of `input[b,h,w,cin]` with `kernels[kh,kw,cin,cout]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    padding: Padding,
    stride: (usize, usize),
) -> Result<Tensor<T>> {
    if input.ndim() != 4 {
        return Err(Error::Shape(format!(
            "conv2d input must be [b,h,w,c], got {:?}",
            input.shape()
        )));
    }
    let g = ConvGeometry::new(&input.shape()[1..], kernels.shape(), padding, stride)?;
    Ok(conv2d_forward(&g, input, kernels))
}

pub(crate) fn conv2d_forward<T: Scalar>(
    g: &ConvGeometry,
    input: &Tensor<T>,
    kernels: &Tensor<T>,
) -> Tensor<T> {
    let batch = input.batch();
    let plen = g.patch_len();
    let opix = g.out_pixels();
    let mut out = vec![T::zero(); batch * opix * g.cout];
    let chunk = g.chunk();
    let mut cols = vec![T::zero(); chunk.min(batch) * opix * plen];
    for start in (0..batch).step_by(chunk) {
        let n = chunk.min(batch - start);
        let src = &input.data()[start * g.in_len()..(start + n) * g.in_len()];
        let cols = &mut cols[..n * opix * plen];
        g.im2col(src, cols);
        let dst = &mut out[start * opix * g.cout..(start + n) * opix * g.cout];
        T::gemm(false, false, n * opix, plen, g.cout, cols, kernels.data(), dst, false);
    }
    Tensor::from_parts(vec![batch, g.out_h, g.out_w, g.cout], out)
}

/// Gradients of [`conv2d`] with respect to its input and its kernels.
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    dout: &Tensor<T>,
    need_kernel_grad: bool,
) -> (Tensor<T>, Option<Tensor<T>>) {
    let batch = input.batch();
    let plen = g.patch_len();
    let opix = g.out_pixels();
    let mut dinput = vec![T::zero(); input.len()];
    let mut dkernels = need_kernel_grad.then(|| vec![T::zero(); kernels.len()]);
    let chunk = g.chunk();
    let mut cols = vec![T::zero(); chunk.min(batch) * opix * plen];
    for start in (0..batch).step_by(chunk) {
        let n = chunk.min(batch - start);
        let dy = &dout.data()[start * opix * g.cout..(start + n) * opix * g.cout];
        let cols = &mut cols[..n * opix * plen];
        if let Some(dk) = dkernels.as_mut() {
            let src = &input.data()[start * g.in_len()..(start + n) * g.in_len()];
            g.im2col(src, cols);
            // dK += cols^T dY
            T::gemm(true, false, plen, n * opix, g.cout, cols, dy, dk, true);
        }
        // dcols = dY K^T
        T::gemm(false, true, n * opix, g.cout, plen, dy, kernels.data(), cols, false);
        let dst = &mut dinput[start * g.in_len()..(start + n) * g.in_len()];
        g.col2im(cols, dst);
    }
    (
        Tensor::from_parts(input.shape().to_vec(), dinput),
        dkernels.map(|d| Tensor::from_parts(kernels.shape().to_vec(), d)),
    )
}

/// Output of [`maxpool2d`]: pooled values plus, per output cell, the flat
/// input index that won the window.
#[derive(Debug, Clone)]
pub struct Pooled<T: Scalar> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

pub fn pool_output_len(input: usize, size: usize, stride: usize) -> Result<usize> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument("pool size and stride must be positive".into()));
    }
    if size > input {
        return Err(Error::Shape(format!("pool window {size} exceeds input {input}")));
    }
    Ok((input - size) / stride + 1)
}

/// Max pooling over `input[b,h,w,c]`, no padding. Ties go to the first
/// element of the window in row-major order.
pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    size: (usize, usize),
    strides: (usize, usize),
) -> Result<Pooled<T>> {
    if input.ndim() != 4 {
        return Err(Error::Shape(format!(
            "maxpool2d input must be [b,h,w,c], got {:?}",
            input.shape()
        )));
    }
    let [b, h, w, c] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let oh = pool_output_len(h, size.0, strides.0)?;
    let ow = pool_output_len(w, size.1, strides.1)?;
    let x = input.data();
    let mut out = Vec::with_capacity(b * oh * ow * c);
    let mut argmax = Vec::with_capacity(b * oh * ow * c);
    for s in 0..b {
        let base = s * h * w * c;
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = base + (oy * strides.0 * w + ox * strides.1) * c + ch;
                    let mut best = x[best_idx];
                    for ky in 0..size.0 {
                        for kx in 0..size.1 {
                            let y = oy * strides.0 + ky;
                            let xx = ox * strides.1 + kx;
                            let idx = base + (y * w + xx) * c + ch;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor::from_parts(vec![b, oh, ow, c], out),
        argmax,
    })
}

/// Route `dout` back to the argmax positions of a `maxpool2d` input.
pub fn maxpool2d_backward<T: Scalar>(
    dout: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dout.data()) {
        d[idx] += g;
    }
    dx
}

//! Layer specifications and the per-layer forward/backward kernels.

use serde::{Deserialize, Serialize};

use super::activation::Activation;
use crate::error::{Error, Result};
use crate::kernels::{conv_output_len, pool_output_len, Padding};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// One entry of a sequential network. Input sizes are inferred from the
/// previous layer when the network is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        padding: Padding,
        stride: (usize, usize),
    },
    MaxPool {
        size: (usize, usize),
        strides: (usize, usize),
    },
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
    BatchNorm {
        momentum: f64,
        epsilon: f64,
    },
    Dropout {
        rate: f64,
    },
    Activation {
        activation: Activation,
    },
}

pub const BATCHNORM_EPSILON: f64 = 1e-5;

impl LayerSpec {
    pub fn dense(units: usize) -> Self {
        LayerSpec::Dense { units }
    }

    pub fn conv(filters: usize, kernel: usize, padding: Padding) -> Self {
        LayerSpec::Conv2d {
            filters,
            kernel: (kernel, kernel),
            padding,
            stride: (1, 1),
        }
    }

    pub fn maxpool(size: usize, stride: usize) -> Self {
        LayerSpec::MaxPool {
            size: (size, size),
            strides: (stride, stride),
        }
    }

    pub fn batchnorm(momentum: f64) -> Self {
        LayerSpec::BatchNorm {
            momentum,
            epsilon: BATCHNORM_EPSILON,
        }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate }
    }

    pub fn act(activation: Activation) -> Self {
        LayerSpec::Activation { activation }
    }

    pub fn relu() -> Self {
        Self::act(Activation::Relu)
    }

    pub fn leaky_relu(alpha: f64) -> Self {
        Self::act(Activation::LeakyRelu { alpha })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            LayerSpec::Dense { units: 0 } => bad("dense layer with zero units".into()),
            LayerSpec::Conv2d {
                filters, kernel, stride, ..
            } if filters == 0 || kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 => {
                bad(format!("conv2d with zero-sized parameter: {self:?}"))
            }
            LayerSpec::MaxPool { size, strides }
                if size.0 == 0 || size.1 == 0 || strides.0 == 0 || strides.1 == 0 =>
            {
                bad(format!("maxpool with zero-sized parameter: {self:?}"))
            }
            LayerSpec::BatchNorm { momentum, epsilon }
                if !(momentum > 0.0 && momentum < 1.0) || !(epsilon > 0.0) =>
            {
                bad(format!("batchnorm momentum must be in (0,1) and epsilon > 0: {self:?}"))
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                bad(format!("dropout rate {rate} outside [0,1)"))
            }
            LayerSpec::Activation {
                activation: Activation::LeakyRelu { alpha },
            } if !(alpha > 0.0) => bad(format!("leaky relu alpha must be positive, got {alpha}")),
            _ => Ok(()),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: &str| {
            Err(Error::Shape(format!("{what} cannot follow per-sample shape {input:?}")))
        };
        match self {
            LayerSpec::Dense { units } => match input {
                [_] => Ok(vec![*units]),
                _ => mismatch("dense layer (flatten first)"),
            },
            LayerSpec::Conv2d {
                filters,
                kernel,
                padding,
                stride,
            } => match input {
                [h, w, _] => {
                    let (oh, _) = conv_output_len(*h, kernel.0, stride.0, *padding)?;
                    let (ow, _) = conv_output_len(*w, kernel.1, stride.1, *padding)?;
                    Ok(vec![oh, ow, *filters])
                }
                _ => mismatch("conv2d"),
            },
            LayerSpec::MaxPool { size, strides } => match input {
                [h, w, c] => Ok(vec![
                    pool_output_len(*h, size.0, strides.0)?,
                    pool_output_len(*w, size.1, strides.1)?,
                    *c,
                ]),
                _ => mismatch("maxpool"),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return mismatch(&format!("reshape to {shape:?}"));
                }
                Ok(shape.clone())
            }
            LayerSpec::BatchNorm { .. } | LayerSpec::Dropout { .. } | LayerSpec::Activation { .. } => {
                Ok(input.to_vec())
            }
        }
    }

    /// Shapes of the trainable parameters.
    pub fn param_shapes(&self, input: &[usize]) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::Dense { units } => vec![vec![input[0], *units], vec![*units]],
            LayerSpec::Conv2d {
                filters, kernel, ..
            } => vec![vec![kernel.0, kernel.1, input[2], *filters], vec![*filters]],
            LayerSpec::BatchNorm { .. } => {
                let c = *input.last().unwrap();
                vec![vec![c], vec![c]]
            }
            _ => Vec::new(),
        }
    }

    /// Shapes of non-trainable state (batchnorm running mean and variance).
    pub fn state_shapes(&self, input: &[usize]) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::BatchNorm { .. } => {
                let c = *input.last().unwrap();
                vec![vec![c], vec![c]]
            }
            _ => Vec::new(),
        }
    }
}

/// `x[b, in] * w[in, out] + bias`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    if x.ndim() != 2 || w.ndim() != 2 || x.shape()[1] != w.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "dense",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    let (b, k, n) = (x.shape()[0], w.shape()[0], w.shape()[1]);
    let mut out = Vec::with_capacity(b * n);
    for _ in 0..b {
        out.extend_from_slice(bias.data());
    }
    T::gemm(false, false, b, k, n, x.data(), w.data(), &mut out, true);
    Ok(Tensor::from_parts(vec![b, n], out))
}

pub struct DenseGrads<T: Scalar> {
    pub dx: Tensor<T>,
    pub dw: Option<Tensor<T>>,
    pub dbias: Option<Tensor<T>>,
}

/// `dX = dY W^T`, `dW = X^T dY`, `dbias = column sums of dY`.
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    need_param_grads: bool,
) -> DenseGrads<T> {
    let (b, k, n) = (x.shape()[0], w.shape()[0], w.shape()[1]);
    let mut dx = vec![T::zero(); b * k];
    T::gemm(false, true, b, n, k, dy.data(), w.data(), &mut dx, false);
    let (dw, dbias) = if need_param_grads {
        let mut dw = vec![T::zero(); k * n];
        T::gemm(true, false, k, b, n, x.data(), dy.data(), &mut dw, false);
        let mut db = vec![T::zero(); n];
        for row in dy.data().chunks_exact(n) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        (
            Some(Tensor::from_parts(vec![k, n], dw)),
            Some(Tensor::from_parts(vec![n], db)),
        )
    } else {
        (None, None)
    };
    DenseGrads {
        dx: Tensor::from_parts(vec![b, k], dx),
        dw,
        dbias,
    }
}

/// Add a per-channel bias over the last axis in place.
pub(crate) fn add_channel_bias<T: Scalar>(x: &mut Tensor<T>, bias: &Tensor<T>) {
    let c = bias.len();
    for row in x.data_mut().chunks_exact_mut(c) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
}

pub(crate) fn channel_sums<T: Scalar>(x: &Tensor<T>, channels: usize) -> Tensor<T> {
    let mut acc = vec![T::zero(); channels];
    for row in x.data().chunks_exact(channels) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    Tensor::from_parts(vec![channels], acc)
}

/// Values saved by a training-mode batchnorm forward for its backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T: Scalar> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Training-mode batchnorm: statistics over every axis except the last.
pub fn batchnorm_forward_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    epsilon: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    if x.batch() < 2 {
        return Err(Error::DegenerateBatch(x.batch()));
    }
    let c = gamma.len();
    let count = x.len() / c;
    let mut mean = vec![0.0f64; c];
    for row in x.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0f64; c];
    for row in x.data().chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v.as_f64() - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= count as f64);
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::from_f64_lossy(1.0 / (v + epsilon).sqrt()))
        .collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64_lossy(m)).collect();
    let mut xhat = x.clone();
    let mut y = x.clone();
    for (xr, yr) in xhat.data_mut().chunks_exact_mut(c).zip(y.data_mut().chunks_exact_mut(c)) {
        for j in 0..c {
            let h = (xr[j] - mean_t[j]) * inv_std[j];
            xr[j] = h;
            yr[j] = gamma.data()[j] * h + beta.data()[j];
        }
    }
    Ok((
        y,
        BatchNormCache {
            xhat,
            inv_std,
            mean: mean_t,
            var: var.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        },
    ))
}

pub fn batchnorm_forward_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    epsilon: f64,
) -> Tensor<T> {
    let c = gamma.len();
    let eps = T::from_f64_lossy(epsilon);
    let scale: Vec<T> = (0..c)
        .map(|j| gamma.data()[j] / (running_var.data()[j] + eps).sqrt())
        .collect();
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(c) {
        for j in 0..c {
            row[j] = (row[j] - running_mean.data()[j]) * scale[j] + beta.data()[j];
        }
    }
    y
}

/// `running <- momentum * running + (1 - momentum) * batch`.
pub fn update_running<T: Scalar>(running: &mut Tensor<T>, batch: &[T], momentum: f64) {
    let m = T::from_f64_lossy(momentum);
    let one_minus = T::from_f64_lossy(1.0 - momentum);
    for (r, &b) in running.data_mut().iter_mut().zip(batch) {
        *r = m * *r + one_minus * b;
    }
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gamma.len();
    let count = dy.len() / c;
    let n = T::from_f64_lossy(count as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (g, h) in dy.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
        for j in 0..c {
            dbeta[j] += g[j];
            dgamma[j] += g[j] * h[j];
        }
    }
    // dx = inv_std / N * (N*gamma*dy - gamma*sum(dy) - xhat*gamma*sum(dy*xhat))
    let mut dx = dy.clone();
    for (d, h) in dx.data_mut().chunks_exact_mut(c).zip(cache.xhat.data().chunks_exact(c)) {
        for j in 0..c {
            let gm = gamma.data()[j];
            d[j] = cache.inv_std[j] / n * (n * gm * d[j] - gm * dbeta[j] - h[j] * gm * dgamma[j]);
        }
    }
    (
        dx,
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    )
}

/// Inverted dropout in training mode. Returns the output and the mask
/// (0 or 1/(1-rate)) to reuse in the backward pass.
pub fn dropout_forward<T: Scalar>(x: &Tensor<T>, rate: f64, rng: &mut Rng) -> (Tensor<T>, Tensor<T>) {
    if rate == 0.0 {
        return (x.clone(), Tensor::full(x.shape(), T::one()));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mask = Tensor::from_fn(x.shape(), |_| {
        if rng.bernoulli(rate) {
            T::zero()
        } else {
            keep
        }
    });
    let y = x.zip_map(&mask, |a, m| a * m).expect("mask shares the input shape");
    (y, mask)
}

use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { alpha: f64 },
    Tanh,
    Sigmoid,
    /// Row-wise over the last axis.
    Softmax,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    // Branch on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn apply_activation<T: Scalar>(act: Activation, x: &Tensor<T>) -> Tensor<T> {
    match act {
        Activation::Relu => x.map(|v| v.max(T::zero())),
        Activation::LeakyRelu { alpha } => {
            let a = T::from_f64_lossy(alpha);
            x.map(|v| if v >= T::zero() { v } else { a * v })
        }
        Activation::Tanh => x.map(|v| v.tanh()),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Softmax => {
            let width = *x.shape().last().expect("softmax of a scalar");
            let mut out = x.clone();
            for row in out.data_mut().chunks_exact_mut(width) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v = *v / total;
                }
            }
            out
        }
    }
}

/// Gradient with respect to the activation input, given its input `x`,
/// output `y`, and the upstream gradient `dy`.
pub fn activation_backward<T: Scalar>(
    act: Activation,
    x: &Tensor<T>,
    y: &Tensor<T>,
    dy: &Tensor<T>,
) -> Tensor<T> {
    let zip = |f: &dyn Fn(T, T, T) -> T| {
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .zip(dy.data())
            .map(|((&x, &y), &g)| f(x, y, g))
            .collect();
        Tensor::from_parts(x.shape().to_vec(), data)
    };
    match act {
        Activation::Relu => zip(&|x, _, g| if x > T::zero() { g } else { T::zero() }),
        Activation::LeakyRelu { alpha } => {
            let a = T::from_f64_lossy(alpha);
            zip(&|x, _, g| if x >= T::zero() { g } else { a * g })
        }
        Activation::Tanh => zip(&|_, y, g| g * (T::one() - y * y)),
        Activation::Sigmoid => zip(&|_, y, g| g * y * (T::one() - y)),
        Activation::Softmax => {
            let width = *x.shape().last().expect("softmax of a scalar");
            let mut dx = Vec::with_capacity(x.len());
            for (yr, gr) in y.data().chunks_exact(width).zip(dy.data().chunks_exact(width)) {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                dx.extend(yr.iter().zip(gr).map(|(&yv, &g)| yv * (g - dot)));
            }
            Tensor::from_parts(x.shape().to_vec(), dx)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::new(&[1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn leaky_relu_negative_side() {
        let y = apply_activation(Activation::LeakyRelu { alpha: 0.2 }, &t(&[-1.0, 3.0]));
        assert!((y.data()[0] + 0.2).abs() < 1e-7);
        assert_eq!(y.data()[1], 3.0);
    }

    #[test]
    fn centers() {
        assert_eq!(apply_activation(Activation::Sigmoid, &t(&[0.0])).data(), &[0.5]);
        assert_eq!(apply_activation(Activation::Tanh, &t(&[0.0])).data(), &[0.0]);
        let s = apply_activation(Activation::Softmax, &t(&[0.0, 0.0, 0.0]));
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn sigmoid_and_softmax_survive_extremes() {
        let y = apply_activation(Activation::Sigmoid, &t(&[-1e4, 1e4]));
        assert_eq!(y.data(), &[0.0, 1.0]);
        let s = apply_activation(Activation::Softmax, &t(&[1e4, 0.0, -1e4]));
        assert!(s.all_finite());
        assert_eq!(s.data()[0], 1.0);
    }
}

//! Sequential networks: shape-checked construction, forward and backward
//! passes through the layer list, and optimizer updates.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use serde::{Deserialize, Serialize};

use super::activation::{activation_backward, apply_activation, Activation};
use super::layers::{
    add_channel_bias, batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train,
    channel_sums, dense_backward, dense_forward, dropout_forward, update_running, BatchNormCache,
    LayerSpec,
};
use super::loss::{fused_logit_grad, loss, LossKind, Target};
use super::optim::{adam_step, rmsprop_step, OptimizerConfig};
use crate::error::{Error, Result};
use crate::kernels::{conv2d_backward, conv2d_forward, maxpool2d, maxpool2d_backward, ConvGeometry};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Scale of the uniform weight init: `limit = sqrt(GLOROT_SCALE / (fan_in + fan_out))`.
pub const GLOROT_SCALE: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batchnorm, dropout active, activations cached for backward.
    Train,
    /// Running statistics in batchnorm, dropout off, nothing cached.
    Infer,
}

/// Optimizer and loss attached to a network for training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compile {
    pub optimizer: OptimizerConfig,
    pub loss: LossKind,
}

#[derive(Debug, Clone)]
enum Cache<T: Scalar> {
    Empty,
    Input(Tensor<T>),
    Activation { input: Tensor<T>, output: Tensor<T> },
    Pool { argmax: Vec<usize>, input_shape: Vec<usize> },
    Norm(BatchNormCache<T>),
    Mask(Tensor<T>),
}

#[derive(Debug, Clone)]
pub struct Layer<T: Scalar = f32> {
    spec: LayerSpec,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    params: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
    state: Vec<Tensor<T>>,
    /// `slots[param][slot]`, allocated by [`Network::compile`].
    slots: Vec<Vec<Tensor<T>>>,
    trainable: bool,
    cache: Cache<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn grads(&self) -> &[Tensor<T>] {
        &self.grads
    }

    pub fn state(&self) -> &[Tensor<T>] {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.state
    }

    pub fn slots(&self) -> &[Vec<Tensor<T>>] {
        &self.slots
    }

    /// Parameters, running statistics, then optimizer slots.
    pub(crate) fn stored_tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params
            .iter_mut()
            .chain(self.state.iter_mut())
            .chain(self.slots.iter_mut().flatten())
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    fn conv_geometry(&self) -> ConvGeometry {
        match &self.spec {
            LayerSpec::Conv2d { padding, stride, .. } => {
                ConvGeometry::new(&self.input_shape, self.params[0].shape(), *padding, *stride)
                    .expect("validated at construction")
            }
            _ => unreachable!("conv geometry of a non-conv layer"),
        }
    }

    fn batch_shape(shape: &[usize], batch: usize) -> Vec<usize> {
        let mut s = Vec::with_capacity(shape.len() + 1);
        s.push(batch);
        s.extend_from_slice(shape);
        s
    }

    fn forward(&mut self, x: Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        let train = mode == Mode::Train;
        let batch = x.batch();
        let y = match self.spec.clone() {
            LayerSpec::Dense { .. } => {
                let y = dense_forward(&x, &self.params[0], &self.params[1])?;
                if train {
                    self.cache = Cache::Input(x);
                }
                y
            }
            LayerSpec::Conv2d { .. } => {
                let g = self.conv_geometry();
                let mut y = conv2d_forward(&g, &x, &self.params[0]);
                add_channel_bias(&mut y, &self.params[1]);
                if train {
                    self.cache = Cache::Input(x);
                }
                y
            }
            LayerSpec::MaxPool { size, strides } => {
                let pooled = maxpool2d(&x, size, strides)?;
                if train {
                    self.cache = Cache::Pool {
                        argmax: pooled.argmax,
                        input_shape: x.shape().to_vec(),
                    };
                }
                pooled.output
            }
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => {
                x.reshape(&Self::batch_shape(&self.output_shape, batch))?
            }
            LayerSpec::BatchNorm { momentum, epsilon } => {
                if train {
                    let (y, cache) =
                        batchnorm_forward_train(&x, &self.params[0], &self.params[1], epsilon)?;
                    // frozen layers keep their running statistics too
                    if self.trainable {
                        update_running(&mut self.state[0], &cache.mean, momentum);
                        update_running(&mut self.state[1], &cache.var, momentum);
                    }
                    self.cache = Cache::Norm(cache);
                    y
                } else {
                    self.infer_batchnorm(&x, epsilon)
                }
            }
            LayerSpec::Dropout { rate } => {
                if train {
                    let (y, mask) = dropout_forward(&x, rate, rng);
                    self.cache = Cache::Mask(mask);
                    y
                } else {
                    x
                }
            }
            LayerSpec::Activation { activation } => {
                let y = apply_activation(activation, &x);
                if train {
                    self.cache = Cache::Activation {
                        input: x,
                        output: y.clone(),
                    };
                }
                y
            }
        };
        Ok(y)
    }

    fn infer_batchnorm(&self, x: &Tensor<T>, epsilon: f64) -> Tensor<T> {
        batchnorm_forward_infer(
            x,
            &self.params[0],
            &self.params[1],
            &self.state[0],
            &self.state[1],
            epsilon,
        )
    }

    /// Inference forward without touching any cached state.
    fn predict(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let batch = x.batch();
        Ok(match &self.spec {
            LayerSpec::Dense { .. } => dense_forward(&x, &self.params[0], &self.params[1])?,
            LayerSpec::Conv2d { .. } => {
                let mut y = conv2d_forward(&self.conv_geometry(), &x, &self.params[0]);
                add_channel_bias(&mut y, &self.params[1]);
                y
            }
            LayerSpec::MaxPool { size, strides } => maxpool2d(&x, *size, *strides)?.output,
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => {
                x.reshape(&Self::batch_shape(&self.output_shape, batch))?
            }
            LayerSpec::BatchNorm { epsilon, .. } => self.infer_batchnorm(&x, *epsilon),
            LayerSpec::Dropout { .. } => x,
            LayerSpec::Activation { activation } => apply_activation(*activation, &x),
        })
    }

    fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let need = self.trainable;
        let batch = dy.batch();
        let missing = || Error::InvalidArgument("backward without a training-mode forward".into());
        let cache = std::mem::replace(&mut self.cache, Cache::Empty);
        let dx = match (&self.spec, cache) {
            (LayerSpec::Dense { .. }, Cache::Input(x)) => {
                let g = dense_backward(&x, &self.params[0], &dy, need);
                if need {
                    self.grads[0] = g.dw.unwrap();
                    self.grads[1] = g.dbias.unwrap();
                }
                g.dx
            }
            (LayerSpec::Conv2d { .. }, Cache::Input(x)) => {
                let geometry = self.conv_geometry();
                let (dx, dk) = conv2d_backward(&geometry, &x, &self.params[0], &dy, need);
                if need {
                    self.grads[0] = dk.unwrap();
                    self.grads[1] = channel_sums(&dy, geometry.cout);
                }
                dx
            }
            (LayerSpec::MaxPool { .. }, Cache::Pool { argmax, input_shape }) => {
                maxpool2d_backward(&dy, &argmax, &input_shape)
            }
            (LayerSpec::Flatten | LayerSpec::Reshape { .. }, _) => {
                dy.reshape(&Self::batch_shape(&self.input_shape, batch))?
            }
            (LayerSpec::BatchNorm { .. }, Cache::Norm(c)) => {
                let (dx, dgamma, dbeta) = batchnorm_backward(&c, &self.params[0], &dy);
                if need {
                    self.grads[0] = dgamma;
                    self.grads[1] = dbeta;
                }
                dx
            }
            (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => dy.zip_map(&mask, |g, m| g * m)?,
            (LayerSpec::Activation { activation }, Cache::Activation { input, output }) => {
                activation_backward(*activation, &input, &output, &dy)
            }
            _ => return Err(missing()),
        };
        Ok(dx)
    }
}

/// A sequential stack of layers with parameters, gradients, and optimizer state.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    compile: Option<Compile>,
    step: u64,
    last_output: Option<Tensor<T>>,
}

fn glorot<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<T> {
    let limit = (GLOROT_SCALE / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.uniform_range(-limit, limit)))
}

impl<T: Scalar> Network<T> {
    /// Build and initialize a network for per-sample inputs of `input_shape`.
    /// The whole shape chain is validated here.
    pub fn new(input_shape: &[usize], specs: Vec<LayerSpec>, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeroed(input_shape, specs)?;
        for layer in &mut net.layers {
            match &layer.spec {
                LayerSpec::Dense { units } => {
                    let fan_in = layer.input_shape[0];
                    layer.params[0] = glorot(layer.params[0].shape(), fan_in, *units, rng);
                }
                LayerSpec::Conv2d { filters, kernel, .. } => {
                    let area = kernel.0 * kernel.1;
                    let fan_in = area * layer.input_shape[2];
                    layer.params[0] = glorot(layer.params[0].shape(), fan_in, area * filters, rng);
                }
                LayerSpec::BatchNorm { .. } => {
                    layer.params[0] = Tensor::full(layer.params[0].shape(), T::one());
                    layer.state[1] = Tensor::full(layer.state[1].shape(), T::one());
                }
                _ => {}
            }
        }
        Ok(net)
    }

    /// Same structure as [`Network::new`] with every tensor zeroed.
    pub(crate) fn zeroed(input_shape: &[usize], specs: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("invalid network input shape {input_shape:?}")));
        }
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            spec.validate()?;
            let out = spec
                .output_shape(&shape)
                .map_err(|e| Error::Shape(format!("layer {i} ({spec:?}): {e}")))?;
            let zeros = |shapes: Vec<Vec<usize>>| -> Vec<Tensor<T>> {
                shapes.iter().map(|s| Tensor::zeros(s)).collect()
            };
            let params = zeros(spec.param_shapes(&shape));
            layers.push(Layer {
                grads: params.clone(),
                params,
                state: zeros(spec.state_shapes(&shape)),
                slots: Vec::new(),
                trainable: true,
                cache: Cache::Empty,
                input_shape: shape,
                output_shape: out.clone(),
                spec,
            });
            shape = out;
        }
        Ok(Network {
            input_shape: input_shape.to_vec(),
            layers,
            compile: None,
            step: 0,
            last_output: None,
        })
    }

    /// Attach an optimizer and loss, resetting optimizer state.
    pub fn compile(&mut self, optimizer: OptimizerConfig, loss: LossKind) -> Result<()> {
        optimizer.validate()?;
        let slots = optimizer.slot_count();
        for layer in &mut self.layers {
            layer.slots = layer
                .params
                .iter()
                .map(|p| vec![Tensor::zeros(p.shape()); slots])
                .collect();
        }
        self.compile = Some(Compile { optimizer, loss });
        self.step = 0;
        Ok(())
    }

    pub fn compiled(&self) -> Option<&Compile> {
        self.compile.as_ref()
    }

    pub(crate) fn set_compiled(&mut self, compile: Option<Compile>, step: u64) {
        self.compile = compile;
        self.step = step;
    }

    pub fn loss_kind(&self) -> Option<LossKind> {
        self.compile.map(|c| c.loss)
    }

    /// Number of optimizer updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map(|l| l.output_shape.as_slice())
            .unwrap_or(&self.input_shape)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.params)
            .map(|p| p.len())
            .sum()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for layer in &mut self.layers {
            layer.trainable = trainable;
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.layers.iter().any(|l| l.trainable)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.ndim() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch {
                op: "network input",
                left: x.shape().to_vec(),
                right: self.input_shape.clone(),
            });
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        if mode == Mode::Infer {
            return self.predict(x);
        }
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(h, mode, rng)?;
        }
        self.last_output = Some(h.clone());
        Ok(h)
    }

    /// Inference-mode forward. Takes `&self`, so a trained network can be
    /// shared across threads.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.predict(h)?;
        }
        Ok(h)
    }

    /// Backpropagate `dout` (gradient w.r.t. the network output). Parameter
    /// gradients are stored on trainable layers; the input gradient is returned.
    pub fn backward(&mut self, dout: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.layers.len();
        self.backward_through(n, dout.clone())
    }

    fn backward_through(&mut self, upto: usize, dout: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = dout;
        for layer in self.layers[..upto].iter_mut().rev() {
            g = layer.backward(g)?;
        }
        Ok(g)
    }

    /// Loss of the last training-mode forward against `target`, followed by
    /// the backward pass. A final softmax (categorical losses) or sigmoid
    /// (binary CE) is differentiated jointly with the loss as `p - y`.
    pub fn backward_loss(&mut self, target: &Target<T>) -> Result<(f64, Tensor<T>)> {
        let kind = self
            .loss_kind()
            .ok_or_else(|| Error::InvalidArgument("network is not compiled".into()))?;
        self.backward_loss_with(kind, target)
    }

    pub fn backward_loss_with(&mut self, kind: LossKind, target: &Target<T>) -> Result<(f64, Tensor<T>)> {
        let pred = self
            .last_output
            .take()
            .ok_or_else(|| Error::InvalidArgument("backward_loss without a forward".into()))?;
        let (value, grad) = loss(kind, &pred, target)?;
        let fused = matches!(
            (self.layers.last().map(|l| &l.spec), kind),
            (
                Some(LayerSpec::Activation { activation: Activation::Softmax }),
                LossKind::CategoricalCe | LossKind::SparseCategoricalCe
            ) | (
                Some(LayerSpec::Activation { activation: Activation::Sigmoid }),
                LossKind::BinaryCe
            )
        );
        let n = self.layers.len();
        let dx = if fused {
            let dlogits = fused_logit_grad(kind, &pred, target)?;
            self.layers[n - 1].cache = Cache::Empty;
            self.backward_through(n - 1, dlogits)?
        } else {
            self.backward_through(n, grad)?
        };
        Ok((value, dx))
    }

    /// Apply one optimizer step to every trainable layer.
    pub fn update(&mut self) -> Result<()> {
        let compile = self
            .compile
            .ok_or_else(|| Error::InvalidArgument("network is not compiled".into()))?;
        self.step += 1;
        let t = self.step;
        for layer in self.layers.iter_mut().filter(|l| l.trainable) {
            for ((p, g), slots) in layer.params.iter_mut().zip(&layer.grads).zip(&mut layer.slots) {
                match (&compile.optimizer, slots.as_mut_slice()) {
                    (OptimizerConfig::Adam(cfg), [m, v]) => {
                        adam_step(cfg, t, p.data_mut(), g.data(), m.data_mut(), v.data_mut())
                    }
                    (OptimizerConfig::RmsProp(cfg), [v]) => {
                        rmsprop_step(cfg, p.data_mut(), g.data(), v.data_mut())
                    }
                    _ => unreachable!("slots allocated by compile"),
                }
            }
        }
        Ok(())
    }

    /// Forward, loss, backward, and update on one batch. Returns the loss
    /// and the training-mode predictions.
    pub fn train_on_batch(
        &mut self,
        x: &Tensor<T>,
        target: &Target<T>,
        rng: &mut Rng,
    ) -> Result<(f64, Tensor<T>)> {
        let pred = self.forward(x, Mode::Train, rng)?;
        let (value, _) = self.backward_loss(target)?;
        if !value.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss {value}")));
        }
        self.update()?;
        Ok((value, pred))
    }

    /// Little-endian bytes of every parameter, running statistic, and
    /// optimizer slot, in declaration order.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for t in layer.params.iter().chain(&layer.state).chain(layer.slots.iter().flatten()) {
                out.extend(t.to_le_bytes());
            }
        }
        out
    }

    /// 64-bit digest of [`Network::state_bytes`].
    pub fn state_digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        h.write(&self.state_bytes());
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::optim::Adam;

    fn toy(rng: &mut Rng) -> Network {
        Network::new(
            &[3],
            vec![
                LayerSpec::dense(4),
                LayerSpec::batchnorm(0.9),
                LayerSpec::relu(),
                LayerSpec::dense(2),
                LayerSpec::act(Activation::Softmax),
            ],
            rng,
        )
        .unwrap()
    }

    #[test]
    fn empty_network_is_identity() {
        let mut net = Network::<f32>::new(&[2, 2], vec![], &mut Rng::new(0)).unwrap();
        let x = Tensor::from_fn(&[3, 2, 2], |i| i as f32);
        assert_eq!(net.forward(&x, Mode::Train, &mut Rng::new(1)).unwrap(), x);
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn shape_chain_is_checked_at_construction() {
        let err = Network::<f32>::new(&[32, 32, 1], vec![LayerSpec::dense(3)], &mut Rng::new(0));
        assert!(err.is_err());
    }

    #[test]
    fn frozen_layers_do_not_move() {
        let mut rng = Rng::new(0);
        let mut net = toy(&mut rng);
        net.compile(OptimizerConfig::Adam(Adam::default()), LossKind::SparseCategoricalCe)
            .unwrap();
        net.set_trainable(false);
        let before = net.state_bytes();
        let x = Tensor::from_fn(&[4, 3], |i| (i as f32).sin());
        net.train_on_batch(&x, &Target::Sparse(&[0, 1, 1, 0]), &mut rng).unwrap();
        assert_eq!(before, net.state_bytes());
        net.set_trainable(true);
        net.train_on_batch(&x, &Target::Sparse(&[0, 1, 1, 0]), &mut rng).unwrap();
        assert_ne!(before, net.state_bytes());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let net = toy(&mut Rng::new(3));
        let x = Tensor::from_fn(&[5, 3], |i| i as f32 - 7.0);
        let y = net.predict(&x).unwrap();
        for i in 0..5 {
            let s: f32 = y.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(y.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn wrong_input_shape_is_an_error() {
        let net = toy(&mut Rng::new(3));
        assert!(net.predict(&Tensor::zeros(&[2, 4])).is_err());
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = toy(&mut Rng::new(3));
        assert!(net.backward(&Tensor::zeros(&[1, 2])).is_err());
    }
}

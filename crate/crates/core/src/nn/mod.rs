//! Layers, losses, optimizers, and the sequential [`Network`].

pub mod activation;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;

pub use activation::{apply_activation, Activation};
pub use checkpoint::{load_network, save_network, Archive};
pub use layers::LayerSpec;
pub use loss::{loss, per_sample_loss, LossKind, Target};
pub use network::{Compile, Layer, Mode, Network};
pub use optim::{adam_step, rmsprop_step, Adam, OptimizerConfig, RmsProp};

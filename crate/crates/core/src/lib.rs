//! Dense GANs for 32x32 handwritten glyphs, scored by three independently
//! trained classifiers before and after a classical cleaning pipeline
//! (Gaussian blur, Otsu threshold, opening, closing, inversion).
//!
//! Everything numeric is implemented here from scratch: tensors and kernels
//! ([`tensor`], [`kernels`]), layers with analytic gradients ([`nn`]), the
//! adversarial loop ([`gan`]), the classifier suite ([`classifier`]), the
//! image pipeline ([`cleaning`]) and the metric tables ([`report`]).

pub mod classifier;
pub mod cleaning;
pub mod data;
pub mod error;
pub mod gan;
pub mod gradcheck;
pub mod kernels;
pub mod nn;
pub mod report;
pub mod rng;
pub mod synth;
pub mod tensor;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
pub use rng::{sample_gaussian, Rng};
pub use tensor::{Scalar, Tensor};

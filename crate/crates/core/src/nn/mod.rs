//! Minimal neural-network engine: channel-last tensors, a fixed layer
//! vocabulary (1x1/3x3 convolutions with reflection padding, a trainable
//! power-law transform, residual blocks), masked MSE and Gaussian NLL
//! losses, ADAM, finite-difference gradient verification, and the NNP1
//! checkpoint format.
//!
//! All math is generic over [`Real`] so the training path runs in `f32`
//! while gradient checks and reference oracles instantiate the identical
//! code at `f64`. Loss and gradient reductions always accumulate in 64-bit,
//! and batch reductions use a fixed chunking so results do not depend on
//! the worker thread count.

mod adam;
mod checkpoint;
mod gradcheck;
mod layer;
mod loss;
mod model;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{read_nnp1, to_nnp1_bytes, write_nnp1};
pub use gradcheck::{grad_check, grad_check_battery, GradCheckCase, LossKind};
pub use layer::{Activation, ConvLayer, Layer, PowerLawLayer, POWER_LAW_EPS};
pub use loss::{gaussian_nll_loss, masked_mse_loss};
pub use model::{
    canopy_model_spec, carbon_model_spec, LayerSpec, Model, ModelSpec, Normalization, OutputHeads,
    Trace,
};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("channel mismatch: layer expects {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("input {got} smaller than kernel {kernel}")]
    InputTooSmall { got: usize, kernel: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty supervision")]
    EmptySupervision,
    #[error("diverged")]
    Diverged,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Floating-point element type for the engine (`f32` or `f64`).
pub trait Real:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of_f32(v: f32) -> Self;
    fn of_f64(v: f64) -> Self;
    fn as_f32(self) -> f32;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

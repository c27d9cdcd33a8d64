//! Library for building, training, and auditing approximately equivariant
//! convolutional models on imperfectly symmetric 2D dynamics: relaxed group
//! convolution, relaxed steerable convolution, soft equivariance
//! regularization, an equivariance-error measurement harness, and synthetic
//! symmetry-broken PDE data generators.
//!
//! Everything numeric is generic over [`Scalar`] (f32 or f64); the `*32` /
//! `*64` aliases below pin concrete instantiations.

pub mod basis;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod group;
pub mod io;
pub mod layers;
pub mod lift;
pub mod model;
pub mod reg;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use group::{act_on_field, CyclicGroup, FeatureField, Representation};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type FeatureField32 = group::FeatureField<f32>;
pub type FeatureField64 = group::FeatureField<f64>;
pub type KernelBasis32 = basis::KernelBasis<f32>;
pub type KernelBasis64 = basis::KernelBasis<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;

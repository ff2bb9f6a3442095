//! Sparse input mask, variational autoencoder and graph-convolutional
//! classifier trained jointly on connectivity matrices, with the baselines,
//! evaluation tools and CLI around them.
//!
//! The autodiff engine, mask and models are generic over [`scalar::Scalar`]
//! (`f32` or `f64`); the training harness runs in `f64`. The aliases below
//! name the concrete instantiations.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod eval;
pub mod gcn;
pub mod losses;
pub mod mask;
pub mod nn;
pub mod scalar;
pub mod train;
pub mod vae;

/// Scalar type of the training pipeline.
pub type Real = f64;

pub type Tensor = autodiff::Tensor<Real>;
pub type Tape = autodiff::Tape<Real>;
pub type Adam = autodiff::Adam<Real>;
pub type SparseMask = mask::SparseMask<Real>;
pub type VaeParams = vae::VaeParams<Real>;
pub type GcnParams = gcn::GcnParams<Real>;
pub type FcnParams = gcn::FcnParams<Real>;
pub type Classifier = gcn::Classifier<Real>;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape32 = autodiff::Tape<f32>;
pub type SparseMask32 = mask::SparseMask<f32>;
pub type VaeParams32 = vae::VaeParams<f32>;
pub type GcnParams32 = gcn::GcnParams<f32>;

//! Model-adaptive unrolled solvers for inverse problems.
//!
//! The crate reconstructs a signal `x` from measurements `y = A(x) + ε` when
//! only an approximation `A₀` of the forward model is known. An untrained
//! residual network `f_θ` is fitted per instance alongside the
//! reconstruction so that `A₀(x) + f_θ(x)` matches the data, while a learned
//! proximal network supplies the regulariser. Two solvers are provided: a
//! fixed-depth unrolled network and a deep-equilibrium variant that iterates
//! the same update map to a fixed point with Anderson acceleration.
//!
//! Module map:
//!
//! - [`tensor`], [`diff`]: dense tensors and reverse-mode differentiation.
//! - [`operators`]: convolution forward models, the fog model and the
//!   composite `A₀ + f_θ` model.
//! - [`networks`]: proximal and mismatch CNNs and their initialisers.
//! - [`solvers`]: proximal gradient, the alternating `(z, θ, x)` updates,
//!   unrolled and equilibrium solvers, Anderson acceleration.
//! - [`synthdata`]: seeded generators for the three reconstruction tasks.
//! - [`training`], [`metrics`]: end-to-end training and evaluation.
//! - [`container`], [`config`]: the tensor file format and key-value configs.

pub mod config;
pub mod container;
pub mod diff;
pub mod error;
pub mod metrics;
pub mod networks;
pub mod operators;
pub mod rng;
pub mod solvers;
pub mod synthdata;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

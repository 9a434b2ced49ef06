//! Sparsity-aware robust generalization bounds for linear classifiers and
//! ReLU networks, with the compression schemes behind them, projected
//! gradient attacks and an adversarial training loop.

pub mod adversarial;
pub mod bound;
pub mod data_io;
pub mod error;
pub mod linalg;
pub mod linear_model;
pub mod matrix_compress;
pub mod model_io;
pub mod network;
pub mod norms;
pub mod rng;
pub mod scalar;
pub mod sparsity;
pub mod training;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, Vector};
pub use network::{Activation, LayeredNetwork};
pub use scalar::Scalar;

pub type Vector32 = Vector<f32>;
pub type Vector64 = Vector<f64>;
pub type Matrix32 = DenseMatrix<f32>;
pub type Matrix64 = DenseMatrix<f64>;
pub type Network32 = LayeredNetwork<f32>;
pub type Network64 = LayeredNetwork<f64>;

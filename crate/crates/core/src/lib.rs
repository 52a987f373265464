//! Deep Galerkin method solvers built from scratch: dense tensors,
//! reverse-mode automatic differentiation with higher-order support, MLP /
//! DGM / residual networks, Adam and SGD, sampled residual losses for four
//! model problems, classical reference solvers and a random-search tuner.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod nn;
pub mod optim;
pub mod problems;
pub mod reference;
pub mod sampling;
pub mod tensor;
pub mod training;
pub mod tuner;

pub use error::{Error, Result};

//! Row-sparse recovery of multiple measurement vectors through gradient
//! descent on a Hadamard-factorized estimate, plus greedy and reweighted
//! baselines, an experiment runner, and numerical checks of the gradient-flow
//! dynamics.

pub mod baselines;
pub mod bench;
pub mod dynamics;
pub mod error;
pub mod matrix;
pub mod problem;
pub mod solver;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;

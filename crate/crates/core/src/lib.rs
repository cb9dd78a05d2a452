//! Deep equilibrium algorithmic reasoning.
//!
//! A gated max-aggregation graph processor is run to its fixed point with a
//! black-box solver and trained, without intermediate-state supervision, to
//! predict the pointer outputs of Bellman-Ford, Floyd-Warshall, strongly
//! connected components and insertion sort. A recurrent baseline that unrolls
//! the same processor for a fixed number of steps is included for comparison.
//!
//! The numeric stack is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix it to double precision, which is what training and evaluation
//! use.

pub mod cli;
pub mod deq;
pub mod error;
pub mod graph_data;
pub mod model;
pub mod numeric;
pub mod scalar;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numeric::Tensor<f64>;
pub type ParamStore64 = numeric::ParamStore<f64>;
pub type Tape64<'a> = numeric::Tape<'a, f64>;
pub type Model64 = model::Model<f64>;

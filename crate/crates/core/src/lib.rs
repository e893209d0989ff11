//! Crystal-graph to density-of-states learning: a graph-attention encoder
//! over crystal graphs feeding a family of sequence decoders (GRU, chunk RNN,
//! chunk RNN with source attention, masked transformer), built on a small
//! reverse-mode autodiff engine, with training, evaluation and benchmarking.

pub mod autodiff;
pub mod gradcheck;
pub mod graph;
pub mod error;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;

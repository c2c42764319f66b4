//! News-aware reinforcement-learning trading toolkit.

pub mod data;
pub mod nn;
pub mod sentiment;
pub mod synth;
pub mod env;
pub mod agents;
pub mod eval;
pub mod tuner;
pub mod pipeline;
pub mod selftest;
pub mod tensor;

pub use tensor::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type ParamSet = tensor::ParamSet<f64>;

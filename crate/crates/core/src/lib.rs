//! Sequence generation with REINFORCE over per-input predicted vocabularies.

pub mod scalar;
pub mod checkpoint;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod nn;
pub mod predictor;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::{Graph, GradStore, ParamId, ParamStore, Tensor, TensorError, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;

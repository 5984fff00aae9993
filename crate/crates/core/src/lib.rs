pub mod attention;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
mod linalg;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use autodiff::{Conv2dSpec, Grads, Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use network::{Model, Model32, Model64, ModelConfig};

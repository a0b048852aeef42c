//! Maxout network-in-network (MIN) and network-in-network (NIN) image
//! classifiers built from scratch: tensors, layers with hand-written
//! backward passes, SGD training, dataset pipelines and capacity analysis.

pub mod error;
pub mod gradcheck;
pub mod analysis;
pub mod cli;
pub mod data;
pub mod layers;
pub mod model;
pub mod network;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{matmul, Matrix, Shape, Tensor};

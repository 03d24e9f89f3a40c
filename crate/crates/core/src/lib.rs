//! Metric-based few-shot classification under domain shift with stochastic
//! feature-wise transformation layers whose noise scales are learned by
//! differentiating through an inner gradient step.

pub mod error;
pub mod rng;
pub mod tensor;
pub mod ft;
pub mod encoder;
pub mod heads;
pub mod task;
pub mod model;
pub mod train;
pub mod config;
pub mod harness;
pub mod checkpoint;
pub mod cli;

pub use error::{Error, Result};
pub use cli::run_cli;
pub use rng::RngStream;
pub use tensor::{finite_difference_grad, Graph, ParamStore, Primitive, Tensor};

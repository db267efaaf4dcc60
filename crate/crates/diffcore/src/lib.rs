//! Minimal reverse-mode differentiation over `f64` tensors.
//!
//! Graphs are built once with shape checking, then evaluated against a
//! [`ParamSet`] and named [`Inputs`]. [`Graph::backward`] returns exact
//! gradients for every parameter leaf; [`grad_check`] compares them against
//! central finite differences.

pub mod checkpoint;
mod error;
mod exec;
mod gradcheck;
mod graph;
mod kernels;
mod optim;
mod params;
mod tensor;

pub use error::{DiffError, Result};
pub use exec::{Evaluation, Gradients, Inputs};
pub use gradcheck::{
    freeze_stop_gradients, grad_check, grad_check_coords, kink_margin, relative_error,
    GradCheckReport, ParamCheck, FD_STEP, RELATIVE_FLOOR,
};
pub use graph::{Graph, NodeId};
pub use optim::Adam;
pub use params::ParamSet;
pub use tensor::Tensor;

//! Tensor values, the differentiation tape, parameters, and gradient checks.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_params};
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use params::{init, Param, ParamStore, Session};
pub use tensor::Tensor;

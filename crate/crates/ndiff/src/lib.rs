//! Small reverse-mode autodiff over dense `f64` matrices.
//!
//! The primitive set is deliberately narrow: matrix products, row-wise
//! softmax and layer norm, a few pointwise nonlinearities, concatenation,
//! reductions and gathers. No broadcasting beyond explicit row-vector ops.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use adam::AdamState;
pub use error::{NdError, Result};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{Graph, Var};
pub use params::ParamStore;
pub use tensor::Tensor;

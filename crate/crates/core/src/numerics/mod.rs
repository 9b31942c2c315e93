//! Dense real tensors with reverse-mode differentiation, Adam, and a complex
//! Hermitian eigensolver.

pub mod adam;
pub mod complex;
pub mod eigen;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;


pub use adam::{adam_step, AdamState};
pub use complex::ComplexMatrix;
pub use eigen::{hermitian_top_eigpair, EigenPair};
pub use gradcheck::{finite_diff_grad_check, param_grad_check};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamStore, Parameter};
pub use tensor::Tensor;

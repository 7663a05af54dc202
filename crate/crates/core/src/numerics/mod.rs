//! Dense arithmetic, seeded randomness, reverse-mode gradients and the
//! small amount of symmetric linear algebra the metrics need.

mod gradcheck;
pub mod graph;
pub mod layers;
pub mod linalg;
pub mod optim;
mod real;
mod rng;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, Var};
pub use layers::{ParamId, ParamSet};
pub use linalg::{matrix_sqrt_psd, symmetric_eigen};
pub use real::Real;
pub use rng::SeededRng;
pub use tensor::Tensor;

//! Dense tensors, seeded random streams and reverse-mode differentiation.

pub mod graph;
mod rng;
mod tensor;

pub use graph::{dropout, gradient, softmax, Graph, Segment, Var};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor};

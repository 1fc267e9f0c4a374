//! Dense tensors on a recorded tape, reverse-mode gradients, Adam, and a
//! central-difference gradient checker.

mod gradcheck;
mod graph;
mod optim;
mod params;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use graph::{attention_weights, sigmoid, Gradients, Graph, Segment, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore};

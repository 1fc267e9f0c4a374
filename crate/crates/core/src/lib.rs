//! Imagine-then-arbitrate turn taking for dialogue agents.
//!
//! Two role-conditioned generators ("imaginators") predict what the agent and
//! the user would say next; an arbitrator fuses the history with both imagined
//! continuations and decides whether the agent should wait or reply.

pub mod arbitrator;
pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod imaginator;
pub mod nn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;

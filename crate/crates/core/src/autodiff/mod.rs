//! Minimal dense-tensor engine: recorded graphs, reverse-mode gradients,
//! finite-difference checking, and the optimizer used by both trainers.

pub mod graph;
pub mod optim;
pub mod tensor;

pub use graph::{grad_check, Gradients, Graph, GraphError, NodeId};
pub use optim::{Adam, LrSchedule, OptimError, ScheduleKind};
pub use tensor::{Tensor, TensorError};

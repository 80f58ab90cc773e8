//! Dense tensors, a reverse-mode tape over the layer set the network uses,
//! AdamW and a finite-difference gradient checker.

mod adamw;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adamw::{AdamW, AdamWConfig};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport, TensorCheck};
pub use graph::{BatchStats, Gradients, Graph, NormStats, Var};
pub use params::{Param, ParamId, ParamStore, CHECKPOINT_HEADER};
pub use tensor::Tensor;

//! Dense tensors, reverse-mode gradients, initialization and SGD.

pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use graph::{Gradients, Graph, Var};
pub use init::xavier_uniform;
pub use optim::{sgd_step, OptimizerConfig, Schedule};
pub use params::ParamStore;
pub use tensor::{cosine_sim, l2_normalize, Tensor};

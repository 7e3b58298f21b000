//! Syntactic inductive biases for neural sequence models: ordered neurons,
//! ordered memory and unsupervised dependency graph networks, together with
//! the synthetic tasks, parsers and metrics used to exercise them.

pub mod checkpoint;
pub mod checks;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod om;
pub mod onlstm;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tasks;
pub mod tensor;
pub mod train;
pub mod tree;
pub mod udgn;

pub use error::{Error, Result};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use tree::{distance_to_tree, BinaryTree};

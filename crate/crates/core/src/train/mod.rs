//! Training and evaluation of the task models.

pub mod config;
pub mod data;
pub mod model;
pub mod trainer;

pub use config::{parse_pairs, ModelKind, Task, TrainConfig};
pub use data::{Data, Records};
pub use model::Model;
pub use trainer::{evaluate, report, EpochLog, Evaluation, Trainer};

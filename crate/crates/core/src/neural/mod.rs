//! Reverse-mode differentiation engine and the neural flow models.

pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod tape;
pub mod train;

pub use checkpoint::Checkpoint;
pub use model::{gcn_forward, Architecture, GraphInput, LayerStack, Mode, ModelConfig};
pub use optim::{Adam, LrSchedule};
pub use tape::{Tape, Var};
pub use train::{train_model, EpochRecord, GraphData, TrainConfig, TrainHistory, TrainingData};

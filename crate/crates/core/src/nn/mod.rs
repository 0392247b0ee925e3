//! Residual policy/value network with hand-written backpropagation.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use loss::masked_softmax;
pub use network::{EvalOutput, NetArchitecture, NetOutput, Network};
pub use optim::{Batch, LossReport, Sgd, TrainConfig, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("training diverged (non-finite loss or weights)")]
    Diverged,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

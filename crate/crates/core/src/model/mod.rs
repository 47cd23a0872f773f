//! Forward-only LSTM encoder, input-feeding dot-attention decoder,
//! read/write policies and checkpoints.

mod checkpoint;
mod network;
mod params;
mod rollout;
mod schedule;

pub use checkpoint::Checkpoint;
pub use network::{attention_context, DecoderState, Dropout, EncoderStates, LstmState, Network, StepOutput};
pub use params::{BoundParams, ModelConfig, ModelParams, Param};
pub use rollout::{argmax, decode, decode_fixed, default_train_max_t, rollout_adaptive, Rollout, RolloutMode};
pub use schedule::{waitk_g, Action, DecodeTrace, Policy, Schedule, TraceStep};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("prefix length {g} outside 1..={available}")]
    PrefixOutOfRange { g: usize, available: usize },
    #[error("empty source sentence")]
    EmptySource,
    #[error("empty reference")]
    EmptyReference,
    #[error("rollout exceeded {max_t} steps")]
    MaxStepsExceeded { max_t: usize },
    #[error("{0}")]
    InvalidPolicy(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

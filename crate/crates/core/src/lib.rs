//! Simultaneous neural machine translation with an adaptive `<wait>` token.
//!
//! The crate contains a small reverse-mode autodiff engine ([`tensor`]), the
//! corpus pipeline ([`data`]), a forward-only LSTM encoder with an
//! input-feeding dot-attention decoder ([`model`]), the training objectives
//! ([`objectives`]: masked cross-entropy, wait-token CTC and the delay
//! penalty), the optimisation loop ([`trainer`]) and latency/BLEU evaluation
//! ([`eval`]).
//!
//! Per-sentence work (losses, gradients, decoding) fans out over a rayon
//! pool when the `parallel` feature is enabled; see [`par`].

pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod par;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use tensor::{Tensor, TensorError};

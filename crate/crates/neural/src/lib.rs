//! A small dense-tensor library with tape-based reverse-mode
//! differentiation, the layers needed by recurrent mask networks
//! (fully connected, batch normalization, bidirectional LSTM), Adam, a
//! plateau learning-rate schedule and a flat checkpoint container.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
mod kernels;
pub mod layers;
pub mod lstm;
pub mod ops;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use error::{NeuralError, Result};
pub use layers::{BatchNorm, BiLstm, ForwardCtx, Linear, ParamId, ParamStore};
pub use optim::{Adam, PlateauSchedule};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

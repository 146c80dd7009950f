//! Dense tensors, a reverse-mode tape, LSTM/MLP building blocks, Adam and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
pub use layers::{dropout_mask, Activation, Embedding, Linear, LstmCell, LstmState, Mlp, MlpSpec};
pub use params::{Checkpoint, Grads, ParamId, ParamStore, CHECKPOINT_VERSION};
pub use tape::{Tape, Var};
pub use tensor::{argmax, softmax, Tensor};

pub(crate) use tensor::softmax_unchecked;

/// Global-norm clipping threshold applied before every optimizer step.
pub const GRAD_CLIP_NORM: f64 = 5.0;

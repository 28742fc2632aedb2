//! Dense `f32` tensors, a reverse-mode tape, Adam and the checkpoint format.

mod adam;
mod checkpoint;
mod gradcheck;
mod ops;
mod params;
mod tape;
pub(crate) mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use gradcheck::{grad_check, grad_check_many};
pub use ops::{sigmoid, softplus, Activation};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Backward, BackwardCtx, Grads, Tape, Var};
pub use tensor::Tensor;

//! A small reverse-mode automatic differentiation engine over NCHW tensors:
//! convolutions, instance normalization, activations, losses, Adam and a
//! versioned checkpoint format. Values are computed in f64; parameters are
//! kept representable in f32 so checkpoints round-trip exactly.

mod adam;
mod checkpoint;
mod error;
mod gradcheck;
mod graph;
mod kernels;
mod param;
mod tensor;

pub use adam::{adam_step, Adam};
pub use checkpoint::{
    decode_checkpoint, decode_header, encode_checkpoint, load_checkpoint, restore_into, save_checkpoint,
    CheckpointHeader, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use error::{AutodiffError, Result};
pub use gradcheck::{gradient_check, GradCheckReport, FD_STEP, REL_FLOOR};
pub use graph::{Activation, Graph, LossKind, Var, LEAKY_SLOPE};
pub use param::{Initializer, ParamId, ParamStore, Parameter};
pub use tensor::{conv_out_size, conv_transpose_out_size, Tensor};

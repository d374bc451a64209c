//! Dense 64-bit tensors with a recorded tape for reverse-mode gradients,
//! parameter storage, Adam, Glorot initialization and a central-difference
//! gradient checker.

mod gradcheck;
mod optim;
mod params;
mod tape;

pub use gradcheck::{finite_diff_gradcheck, gradcheck_params, DEFAULT_STEP};
pub use optim::{adam_step, glorot_bound, glorot_init, AdamConfig, AdamState, Initializer};
pub use params::{BoundParams, ParamId, ParamStore, TensorRecord};
pub use tape::{concat_cols, concat_rows, CustomBackward, Gradients, Tape, Tensor};

pub(crate) use tape::softmax_row;

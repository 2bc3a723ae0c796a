//! Dense tensors, reverse-mode differentiation, initialization and the
//! optimizer.

mod gradcheck;
pub mod ops;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_all, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use ops::{eval, log_softmax, CustomOp, OpKind};
pub use optim::{
    clip_gradients, init_bound, init_uniform, init_uniform_with, seeded_rng, Adam, AdamConfig,
    ClipMode, SeededRng,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

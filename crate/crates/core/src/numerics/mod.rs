//! Tensor engine: reverse-mode tape, parameter stores, AdamW, cosine schedule,
//! finite-difference gradient checks and the checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{gradcheck, gradcheck_store, relative_error, GradcheckReport};
pub use optim::{adamw_step, cosine_lr, AdamW, AdamWConfig};
pub use params::{trunc_normal, Gradients, ParameterStore, Role};
pub use tape::{Bound, Tape, Var};
pub use tensor::{Real, Tensor};

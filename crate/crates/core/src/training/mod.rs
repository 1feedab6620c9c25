//! Joint training of the supervised, graph and BYOL branches.

pub mod batch;
pub mod config;
pub mod eval;
pub mod fit;
pub mod gradcheck;
pub mod model;

pub use batch::{compose_batches, steps_per_epoch, BatchPlan};
pub use config::{LossWeights, ModelConfig, TrainConfig, Variant};
pub use eval::{evaluate, predict, EvalReport, Predictions};
pub use fit::{fit, to_jsonl, EpochLog, FitOutput, LossBundle, StepEvent, StepReport, Trainer};
pub use model::{Bindings, LossVars, Model, ParamCounts, StepInputs, TARGET_PREFIX};

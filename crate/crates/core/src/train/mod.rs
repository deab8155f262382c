//! Optimisation: global-norm clipping, Adam, checkpoints and the
//! truncated-BPTT training loop.

mod adam;
mod checkpoint;
mod clip;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointError, Descriptor, NamedTensor, RngState, VocabSection, MAGIC};
pub use clip::{clip_global_norm, global_norm};
pub use trainer::{load_model, train_loop, StepRecord, TrainConfig, TrainError, TrainSummary, Trainer};

//! Teacher-forced training with AdaDelta, clipping and checkpoint averaging.

mod average;
mod metrics;
mod optim;
mod run;

pub use average::{checkpoint_average, ATTR_NAME};
pub use metrics::{cross_entropy, frame_accuracy, frame_hits};
pub use optim::{adadelta_step, clip_gradients, global_norm, AdaDeltaConfig, GradMap, OptimizerState};
pub use run::{make_batches, train_loop, QuantMode, StepInfo, TrainConfig, TrainOptions, TrainRun};

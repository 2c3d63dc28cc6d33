//! TD-network learning and the Monte Carlo baselines it is compared with.

mod batch;
mod mc;
mod td;

pub use batch::{sweep_along_sequence, train_batch, BatchOptions, BatchOutcome};
pub use mc::{mc_train_conditional, mc_train_unconditional, McConditional, McMode, McPredictions};
pub use td::{train_online, train_online_with, PredictionLog, StepView, TdState};

//! Training losses and the training loop.

pub mod loss;
pub mod optim;
pub mod train;

pub use loss::{coref_loss, flow_loss, joint_loss, loss_graph, nll_loss, LossBreakdown, LossGraph, Objective};
pub use optim::{clip_global_norm, sgd_update, Adam};
pub use train::{evaluate_loss, train, EpochRecord, StepStats, TrainConfig, TrainOutcome, TrainRun, Trainer};

//! Episodic meta-training and evaluation.

pub mod adam;
mod evaluate;
mod train;

pub use evaluate::{evaluate, evaluation_episode, EpisodeRecord, EvalReport};
pub use train::{train, EpochLog, EarlyStopping, TrainConfig, TrainOutcome};

//! Policy-gradient fine-tuning: annealed cross-entropy / REINFORCE with a
//! greedy baseline and per-phrase feedback rewards, RL dataset modes and
//! evaluation.

mod data;
mod estimator;
mod schedule;
pub mod tiny;
mod train;

pub use data::{build_rl_images, Extra, FeedbackSentence, PoolRef, RlImage, RlMode, DEFAULT_GT};
pub use estimator::{mixed_step, phrase_rewards, Baseline, PgContext, StepInput, StepStats};
pub use schedule::AnnealSchedule;
pub use train::{evaluate, greedy_captions, train_rl, EvalSet, RlBatchLog, RlConfig, RlEpochLog, TrainLog};

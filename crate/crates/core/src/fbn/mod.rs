//! Text-only feedback network judging each phrase of a caption as correct,
//! wrong or not relevant given a feedback sentence.

mod dataset;
mod model;

pub use dataset::{
    build_fbn_dataset, load_fbn_dataset, mistake_index, save_fbn_dataset, FbnExample, NUM_MISTAKE_TYPES,
};
pub use model::{
    eval_fbn, eval_groups, fbn_vocab, train_fbn, Fbn, FbnCheckpoint, FbnConfig, FbnEpochLog, FbnEval, FbnGroup,
    FbnModel, FbnTrainConfig, FbnTrainReport, FeedbackCode,
};

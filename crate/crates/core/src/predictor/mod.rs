//! Next-intent prediction: an encoder-decoder transformer over event
//! sequences with one-shot decoding of the horizon slots, optional KG
//! initialization of the intent embeddings, and Consequent-rule
//! post-processing.

mod infer;
mod io;
mod model;
pub mod tape;
mod train;

pub use infer::{
    apply_rules, predict_top_k, recent_intents, top_k, PredictionResult, RankedIntent, RuleConfig, RuleMatch, Slot,
};
pub use io::{read_predictor, write_predictor};
pub use model::{PredictorConfig, PredictorModel, PredictorVocab};
pub use train::{train_predictor, user_histories, TrainedPredictor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("invalid predictor config: {0}")]
    Config(String),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("out of vocabulary: {0}")]
    OutOfVocabulary(String),
    #[error("context is empty")]
    EmptyContext,
    #[error("context is not sorted by time")]
    UnsortedContext,
    #[error("horizon {requested} outside 1..={max}")]
    Horizon { requested: usize, max: usize },
    #[error("no training cases")]
    EmptyDataset,
    #[error("training diverged to non-finite weights")]
    NonFinite,
    #[error(transparent)]
    Record(#[from] crate::records::RecordError),
}

//! Intent and item representations: the hashed n-gram text encoder, GCN
//! intent embeddings over the concept graph, and the bilinear item-intent
//! matcher.

mod encoder;
mod gcn;
mod matcher;
mod matrix;

pub use encoder::{TextEncoder, TextEncoderConfig};
pub use gcn::{
    build_intent_embeddings, gcn_forward, glorot_weights, normalized_adjacency, read_embedding_table,
    write_embedding_table, GcnConfig, IntentEmbeddingTable,
};
pub use matcher::{
    label_item, read_matcher, score_item_intent, train_matcher, write_matcher, IntentScore, Item, ItemKind,
    LossKind, MatcherConfig, MatcherParams, MatcherProblem, TrainedMatcher,
};
pub use matrix::DenseMatrix;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReprError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty training dataset")]
    EmptyDataset,
    #[error("unknown intent {0:?}")]
    UnknownIntent(String),
    #[error("graph has no intent nodes")]
    NoIntents,
    #[error("item {0:?} has neither text nor image vector")]
    EmptyItem(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Record(#[from] crate::records::RecordError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

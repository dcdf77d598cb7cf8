//! Concept knowledge graph driven next-intent prediction.
//!
//! * [`graph`]: the typed concept graph and its persistence format.
//! * [`mining`]: node extraction, alignment, sememes and relation miners.
//! * [`repr`]: text encoder, GCN intent embeddings, item-intent matcher.
//! * [`predictor`]: encoder-decoder next-intent model and rule post-processing.
//! * [`sim`]: planted synthetic worlds and the recall/ranking harness.

pub mod graph;
pub mod mining;
pub mod predictor;
pub mod records;
pub mod repr;
pub mod sim;
pub mod util;

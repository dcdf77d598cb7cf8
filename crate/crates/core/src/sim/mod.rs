//! Synthetic worlds with planted ground truth, event logs sampled from them,
//! the Bayes-optimal next-intent oracle, and the offline evaluation harness.

mod bayes;
mod eval;
mod experiment;
mod logs;
mod pipeline;
pub mod text;
mod world;

pub use bayes::{bayes_rate, BayesOracle};
pub use eval::*;
pub use experiment::{
    evaluate, intent_tables, predictor_config, run_experiment, train_predictors, Artifacts, Evaluation, Experiment,
    ExperimentConfig,
};
pub use pipeline::{build_world_kg, consequent_confidence, mine_relations_into, MinedRelations, WorldKg, CORPUS_SIZE};
pub use logs::{generate_logs, user_ranges, EventTrace, SimLogs, LONG_GAP, SESSION_GAP, SHORT_GAP};
pub use world::{generate_world, PlantedEdge, SyntheticWorld, WorldConfig, WorldIntent, WorldItem, DEFAULT_START};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("over-constrained world: edge {src:?} -> {dst:?} needs p >= {required:.3} but p_max is {max:.3}")]
    OverConstrained {
        src: String,
        dst: String,
        required: f64,
        max: f64,
    },
    #[error("world audit failed: {0}")]
    Audit(String),
    #[error("unknown intent {0:?}")]
    UnknownIntent(String),
    #[error("unknown location {0:?}")]
    UnknownLocation(String),
    #[error("history has zero probability under the world")]
    ImpossibleHistory,
    #[error("component not ready: {0}")]
    Untrained(String),
    #[error("{0}")]
    Component(String),
}

use serde::{Deserialize, Serialize};

use super::eval::{
    evaluate_next_intent, eval_rules, hold_out_last, labeling_metrics, run_recsys, untrained_model, Catalog,
    EvalReport, HeldOut, LabelingMetrics, ModelForecaster, NextIntentReport, OracleForecaster, PopularityOnly,
    RecsysConfig, RecsysResult,
};
use super::logs::{generate_logs, SimLogs, SESSION_GAP};
use super::pipeline::{build_world_kg, WorldKg};
use super::world::{generate_world, SyntheticWorld, WorldConfig};
use super::SimError;
use crate::graph::ConceptGraph;
use crate::mining::{segment_sessions, ConsequentConfig, UserEvent};
use crate::predictor::{train_predictor, PredictorConfig, PredictorModel, PredictorVocab};
use crate::repr::{build_intent_embeddings, train_matcher, GcnConfig, IntentEmbeddingTable, Item, MatcherConfig, TextEncoder, TextEncoderConfig, TrainedMatcher};

/// Everything needed to run the offline loop on one synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub users: usize,
    pub events_per_user: usize,
    pub consequent: ConsequentConfig,
    /// `n_intents`, `n_locations` and `seed` are filled in from the world.
    pub predictor: PredictorConfig,
    /// GCN seed for the predictor's KG table; its widths follow `d_model`.
    pub predictor_gcn_seed: u64,
    pub matcher: MatcherConfig,
    pub matcher_gcn: GcnConfig,
    pub label_threshold: f64,
    pub beta: f64,
    pub recsys: RecsysConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldConfig::default(),
            users: 800,
            events_per_user: 12,
            consequent: ConsequentConfig::default(),
            predictor: PredictorConfig {
                d_model: 16,
                heads: 4,
                encoder_layers: 1,
                decoder_layers: 1,
                context_len: 6,
                horizon: 1,
                ffn_mult: 2,
                epochs: 6,
                batch_size: 64,
                learning_rate: 3e-3,
                ..PredictorConfig::default()
            },
            predictor_gcn_seed: 7,
            matcher: MatcherConfig {
                encoder: TextEncoderConfig {
                    dim: 256,
                    ..TextEncoderConfig::default()
                },
                precondition: true,
                learning_rate: 5.0,
                epochs: 300,
                ..MatcherConfig::default()
            },
            matcher_gcn: GcnConfig::default(),
            label_threshold: 0.5,
            beta: 0.5,
            recsys: RecsysConfig::default(),
        }
    }
}

/// Intermediate artifacts and results of one run.
pub struct Experiment {
    pub world: SyntheticWorld,
    pub logs: SimLogs,
    pub held_out: HeldOut,
    pub kg: WorldKg,
    pub predictor_table: IntentEmbeddingTable,
    pub matcher_table: IntentEmbeddingTable,
    pub matcher: TrainedMatcher,
    pub plain: PredictorModel,
    pub fused: PredictorModel,
    pub next: NextIntentReport,
    pub labeling: LabelingMetrics,
    pub full: RecsysResult,
    pub popularity: RecsysResult,
    pub random: RecsysResult,
    pub oracle: RecsysResult,
    pub report: EvalReport,
}

fn component<E: std::fmt::Display>(e: E) -> SimError {
    SimError::Component(e.to_string())
}

/// The predictor config actually trained for a world and seed.
pub fn predictor_config(config: &ExperimentConfig, world: &SyntheticWorld, seed: u64, fuse: bool) -> PredictorConfig {
    PredictorConfig {
        n_intents: world.n_intents(),
        n_locations: world.locations().len(),
        seed,
        fuse_kg: fuse,
        ..config.predictor.clone()
    }
}

/// GCN tables for the predictor (widths follow `d_model`) and the matcher.
pub fn intent_tables(
    config: &ExperimentConfig,
    graph: &ConceptGraph,
) -> Result<(IntentEmbeddingTable, IntentEmbeddingTable), SimError> {
    let encoder = TextEncoder::default();
    let d = config.predictor.d_model;
    let predictor_gcn = GcnConfig {
        layer_dims: vec![d, d],
        seed: config.predictor_gcn_seed,
    };
    let predictor = build_intent_embeddings(graph, &encoder, &predictor_gcn).map_err(component)?;
    let matcher = build_intent_embeddings(graph, &encoder, &config.matcher_gcn).map_err(component)?;
    Ok((predictor, matcher))
}

/// Plain and KG-fused predictors trained on the sessions of `train`.
pub fn train_predictors(
    config: &ExperimentConfig,
    world: &SyntheticWorld,
    train: &[UserEvent],
    table: &IntentEmbeddingTable,
    seed: u64,
) -> Result<(PredictorModel, PredictorModel), SimError> {
    let sessions = segment_sessions(train, SESSION_GAP, usize::MAX);
    let vocab = PredictorVocab::new(world.labels(), world.locations());
    let train = |fuse: bool| {
        train_predictor(&sessions, &predictor_config(config, world, seed, fuse), vocab.clone(), Some(table))
            .map(|t| t.model)
            .map_err(component)
    };
    Ok((train(false)?, train(true)?))
}

/// Trained artifacts an evaluation runs on.
pub struct Artifacts<'a> {
    pub graph: &'a ConceptGraph,
    pub matcher: &'a TrainedMatcher,
    pub matcher_table: &'a IntentEmbeddingTable,
    pub plain: &'a PredictorModel,
    pub fused: &'a PredictorModel,
}

/// Evaluation results for one run.
pub struct Evaluation {
    pub next: NextIntentReport,
    pub labeling: LabelingMetrics,
    pub full: RecsysResult,
    pub popularity: RecsysResult,
    pub random: RecsysResult,
    pub oracle: RecsysResult,
    pub report: EvalReport,
}

/// Next-intent ablations, labeling quality and the recommender against its
/// baselines.
pub fn evaluate(
    config: &ExperimentConfig,
    seed: u64,
    world: &SyntheticWorld,
    held_out: &HeldOut,
    art: &Artifacts,
) -> Result<Evaluation, SimError> {
    let data = world.labeled_items();
    let labeling = labeling_metrics(art.matcher, art.matcher_table, &data, config.label_threshold)?;
    let rules = eval_rules(config.beta);
    let next = evaluate_next_intent(art.plain, art.fused, &held_out.points, art.graph, &rules)?;

    let items: Vec<Item> = data.into_iter().map(|(i, _)| i).collect();
    let catalog = Catalog::build(
        &items,
        &world.labels(),
        &held_out.train,
        art.matcher,
        art.matcher_table,
        config.label_threshold,
    )?;
    let points = &held_out.points;
    let full = run_recsys(
        &catalog,
        points,
        &ModelForecaster {
            model: art.fused,
            graph: Some(art.graph),
            rules: rules.clone(),
        },
        &config.recsys,
    )?;
    let popularity = run_recsys(&catalog, points, &PopularityOnly, &config.recsys)?;
    let vocab = PredictorVocab::new(world.labels(), world.locations());
    let untrained = untrained_model(&predictor_config(config, world, seed, false), vocab)?;
    let random = run_recsys(
        &catalog,
        points,
        &ModelForecaster {
            model: &untrained,
            graph: None,
            rules,
        },
        &config.recsys,
    )?;
    let oracle = run_recsys(&catalog, points, &OracleForecaster, &config.recsys)?;
    let echo = serde_json::to_value(config).map_err(component)?;
    let report = EvalReport::new(seed, echo, &next, &labeling, &full, &popularity);
    Ok(Evaluation {
        next,
        labeling,
        full,
        popularity,
        random,
        oracle,
        report,
    })
}

/// simulate, build the KG, train the matcher and both predictors, then
/// evaluate next-intent ablations, labeling and the recommender.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<Experiment, SimError> {
    let world = generate_world(&config.world, seed)?;
    let logs = generate_logs(&world, config.users, config.events_per_user, seed);
    let held_out = hold_out_last(&logs.events);
    if held_out.points.is_empty() {
        return Err(SimError::Config("no held-out events; need users with at least two events".into()));
    }
    let kg = build_world_kg(&world, &held_out.train, &config.consequent, seed)?;
    let (predictor_table, matcher_table) = intent_tables(config, &kg.graph)?;
    let matcher = train_matcher(&world.labeled_items(), &matcher_table, &config.matcher).map_err(component)?;
    let (plain, fused) = train_predictors(config, &world, &held_out.train, &predictor_table, seed)?;
    let e = evaluate(
        config,
        seed,
        &world,
        &held_out,
        &Artifacts {
            graph: &kg.graph,
            matcher: &matcher,
            matcher_table: &matcher_table,
            plain: &plain,
            fused: &fused,
        },
    )?;
    Ok(Experiment {
        world,
        logs,
        held_out,
        kg,
        predictor_table,
        matcher_table,
        matcher,
        plain,
        fused,
        next: e.next,
        labeling: e.labeling,
        full: e.full,
        popularity: e.popularity,
        random: e.random,
        oracle: e.oracle,
        report: e.report,
    })
}

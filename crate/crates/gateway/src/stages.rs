//! The pipeline stages behind the CLI subcommands. Each stage reads its
//! inputs from files, writes its artifacts and returns a short summary.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use intentkg_core::graph::{load_graph, save_graph, ConceptGraph, NodeKind, ValidationReport};
use intentkg_core::mining::{build_graph, read_events, write_events, write_relations, Lexicon, UserEvent};
use intentkg_core::predictor::{predict_top_k, read_predictor, write_predictor, PredictionResult, PredictorModel, Slot};
use intentkg_core::repr::{
    read_embedding_table, read_matcher, train_matcher, write_embedding_table, write_matcher, IntentEmbeddingTable,
    TrainedMatcher,
};
use intentkg_core::sim::{
    eval_rules, evaluate, generate_logs, generate_world, hold_out_last, intent_tables, mine_relations_into,
    train_predictors, Artifacts, EvalReport, SyntheticWorld, CORPUS_SIZE,
};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{GatewayError, Result};

pub const MATCHER_MODEL: &str = "matcher.model";
pub const MATCHER_TABLE: &str = "matcher.embeddings.tsv";
pub const PREDICTOR_PLAIN: &str = "predictor.plain.model";
pub const PREDICTOR_FUSED: &str = "predictor.fused.model";
pub const PREDICTOR_TABLE: &str = "predictor.embeddings.tsv";

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| GatewayError::runtime(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| GatewayError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| GatewayError::runtime(format!("cannot create {}: {e}", path.display())))
}

fn at(path: &Path) -> impl Fn(String) -> GatewayError + '_ {
    move |e| GatewayError::runtime(format!("{}: {e}", path.display()))
}

fn fail<E: std::fmt::Display>(e: E) -> GatewayError {
    GatewayError::runtime(e)
}

fn finish(w: BufWriter<File>, path: &Path) -> Result<()> {
    w.into_inner()
        .map_err(|e| e.to_string())
        .and_then(|f| f.sync_all().map_err(|e| e.to_string()))
        .map_err(at(path))
}

pub fn read_world(path: &Path) -> Result<SyntheticWorld> {
    serde_json::from_reader(open(path)?).map_err(|e| at(path)(e.to_string()))
}

pub fn read_event_file(path: &Path) -> Result<Vec<UserEvent>> {
    read_events(open(path)?).map_err(|e| at(path)(e.to_string()))
}

pub fn read_graph(path: &Path) -> Result<ConceptGraph> {
    load_graph(open(path)?).map_err(|e| at(path)(e.to_string()))
}

fn write_graph(graph: &ConceptGraph, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    save_graph(graph, &mut w).map_err(|e| at(path)(e.to_string()))?;
    finish(w, path)
}

pub fn read_predictor_file(path: &Path) -> Result<PredictorModel> {
    read_predictor(open(path)?).map_err(|e| at(path)(e.to_string()))
}

pub fn read_matcher_file(path: &Path) -> Result<TrainedMatcher> {
    read_matcher(open(path)?).map_err(|e| at(path)(e.to_string()))
}

pub fn read_table(path: &Path, graph: &ConceptGraph) -> Result<IntentEmbeddingTable> {
    read_embedding_table(open(path)?, graph).map_err(|e| at(path)(e.to_string()))
}

fn write_table(table: &IntentEmbeddingTable, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    write_embedding_table(table, &mut w).map_err(|e| at(path)(e.to_string()))?;
    finish(w, path)
}

/// `simulate`: world, event log, query corpus and lexicon.
pub fn simulate(c: &PipelineConfig) -> Result<String> {
    let e = &c.experiment;
    let world = generate_world(&e.world, c.seed).map_err(|e| GatewayError::config(format!("experiment.world: {e}")))?;
    let logs = generate_logs(&world, e.users, e.events_per_user, c.seed);

    let path = c.out.join("world.json");
    let mut w = create(&path)?;
    serde_json::to_writer(&mut w, &world).map_err(|e| at(&path)(e.to_string()))?;
    finish(w, &path)?;

    let path = c.out.join("events.jsonl");
    let mut w = create(&path)?;
    write_events(&logs.events, &mut w).map_err(|e| at(&path)(e.to_string()))?;
    finish(w, &path)?;

    let path = c.out.join("corpus.txt");
    let mut w = create(&path)?;
    for q in world.query_corpus(CORPUS_SIZE, c.seed) {
        writeln!(w, "{q}").map_err(|e| at(&path)(e.to_string()))?;
    }
    finish(w, &path)?;

    let path = c.out.join("lexicon.json");
    std::fs::write(&path, world.lexicon.to_json()).map_err(|e| at(&path)(e.to_string()))?;
    Ok(format!(
        "simulate: {} intents, {} planted edges, {} items, {} events from {} users",
        world.n_intents(),
        world.edges.len(),
        world.items.len(),
        logs.len(),
        e.users
    ))
}

/// `build-kg`: intents, functions, products and sememes from the corpus.
pub fn build_kg(c: &PipelineConfig) -> Result<String> {
    let path = c.corpus_path();
    let corpus: Vec<String> = open(&path)?
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| at(&path)(e.to_string()))?;
    let path = c.lexicon_path();
    let text = std::fs::read_to_string(&path).map_err(|e| at(&path)(e.to_string()))?;
    let lexicon = Lexicon::from_json(&text).map_err(|e| at(&path)(e.to_string()))?;
    let (graph, summary) = build_graph(&corpus, &lexicon, &c.build).map_err(fail)?;
    write_graph(&graph, &c.base_graph_path())?;
    Ok(format!(
        "build-kg: {} candidates, {} intents ({} merged), {} product isA edges, {} nodes",
        summary.candidates,
        summary.intents,
        summary.merged,
        summary.product_isa,
        graph.node_count()
    ))
}

/// `mine-relations`: lexical isA and Consequent relations from the training
/// part of the log (the last event of every user is held out).
pub fn mine_relations(c: &PipelineConfig) -> Result<String> {
    let mut graph = read_graph(&c.base_graph_path())?;
    let events = read_event_file(&c.events_path())?;
    let held_out = hold_out_last(&events);
    let mined = mine_relations_into(&mut graph, &held_out.train, &c.experiment.consequent).map_err(fail)?;
    let path = c.out.join("relations.jsonl");
    let mut w = create(&path)?;
    let all: Vec<_> = mined.isa.iter().chain(&mined.consequent).cloned().collect();
    write_relations(&all, &mut w).map_err(|e| at(&path)(e.to_string()))?;
    finish(w, &path)?;
    write_graph(&graph, &c.out.join("graph.jsonl"))?;
    Ok(format!(
        "mine-relations: {} isA ({} inserted), {} consequent ({} inserted)",
        mined.isa.len(),
        mined.isa_report.inserted,
        mined.consequent.len(),
        mined.consequent_report.inserted
    ))
}

/// `train-matcher`: item-intent matcher on the world's labeled catalog.
pub fn train_matcher_stage(c: &PipelineConfig) -> Result<String> {
    let graph = read_graph(&c.graph_path())?;
    let world = read_world(&c.world_path())?;
    let (_, table) = intent_tables(&c.experiment, &graph).map_err(fail)?;
    let data = world.labeled_items();
    let matcher = train_matcher(&data, &table, &c.experiment.matcher).map_err(fail)?;
    write_table(&table, &c.model_path(MATCHER_TABLE))?;
    let path = c.model_path(MATCHER_MODEL);
    let mut w = create(&path)?;
    write_matcher(&matcher, &mut w).map_err(|e| at(&path)(e.to_string()))?;
    finish(w, &path)?;
    Ok(format!(
        "train-matcher: {} items, loss {:.4} -> {:.4}, fingerprint {}",
        data.len(),
        matcher.loss_history[0],
        matcher.final_loss(),
        matcher.fingerprint()
    ))
}

/// `train-predictor`: plain and KG-fused next-intent predictors.
pub fn train_predictor_stage(c: &PipelineConfig) -> Result<String> {
    let graph = read_graph(&c.graph_path())?;
    let world = read_world(&c.world_path())?;
    let events = read_event_file(&c.events_path())?;
    let held_out = hold_out_last(&events);
    let (table, _) = intent_tables(&c.experiment, &graph).map_err(fail)?;
    let (plain, fused) = train_predictors(&c.experiment, &world, &held_out.train, &table, c.seed).map_err(fail)?;
    write_table(&table, &c.model_path(PREDICTOR_TABLE))?;
    for (model, name) in [(&plain, PREDICTOR_PLAIN), (&fused, PREDICTOR_FUSED)] {
        let path = c.model_path(name);
        let mut w = create(&path)?;
        write_predictor(model, &mut w).map_err(|e| at(&path)(e.to_string()))?;
        finish(w, &path)?;
    }
    Ok(format!(
        "train-predictor: {} training events, plain {}, fused {}",
        held_out.train.len(),
        plain.fingerprint(),
        fused.fingerprint()
    ))
}

/// The worked example: a taxi ride followed by movie tickets.
#[derive(Debug, Clone, Serialize)]
pub struct Demonstration {
    pub history: Vec<String>,
    pub prediction: PredictionResult,
    /// Whether "buy snacks" is in the top-K with a rule chain ending in it.
    pub snacks_explained: bool,
}

pub const DEMO_HISTORY: [&str; 2] = ["take an internet taxi", "buy movie tickets"];
pub const DEMO_TARGET: &str = "buy snacks";

pub fn demonstration(model: &PredictorModel, graph: &ConceptGraph, beta: f64, k: usize) -> Result<Option<Demonstration>> {
    if DEMO_HISTORY
        .iter()
        .chain([&DEMO_TARGET])
        .any(|l| graph.find(NodeKind::Intent, l).is_none() || !model.vocab.intents.iter().any(|v| v == l))
    {
        return Ok(None);
    }
    let t0 = intentkg_core::sim::DEFAULT_START + 19 * 3600;
    let loc = model.vocab.locations.first().cloned().unwrap_or_default();
    let context: Vec<UserEvent> = DEMO_HISTORY
        .iter()
        .enumerate()
        .map(|(i, l)| UserEvent {
            user: "demo".into(),
            ts: t0 + 900 * i as u64,
            loc: loc.clone(),
            intent: Some(l.to_string()),
            item: None,
        })
        .collect();
    let slot = Slot {
        ts: t0 + 1800,
        loc: None,
    };
    let prediction = predict_top_k(model, &context, &[slot], k, Some(graph), &eval_rules(beta)).map_err(fail)?;
    let snacks_explained = prediction.top_k.iter().any(|r| r.label == DEMO_TARGET)
        && prediction
            .explanations
            .iter()
            .any(|m| m.path.last().map(String::as_str) == Some(DEMO_TARGET));
    Ok(Some(Demonstration {
        history: DEMO_HISTORY.iter().map(|s| s.to_string()).collect(),
        prediction,
        snacks_explained,
    }))
}

fn render_demo(d: &Demonstration) -> String {
    let mut s = format!("demonstration: {}\n", d.history.join(" -> "));
    for r in &d.prediction.top_k {
        s += &format!("  {:<28} {:.4}\n", r.label, r.probability);
    }
    for m in &d.prediction.explanations {
        s += &format!("  because {} (confidence {:.3})\n", m.path.join(" -> "), m.confidence);
    }
    s
}

/// `evaluate`: the report table, written as JSON to `report.json`, plus the
/// demonstration, written to `demo.json`.
pub fn evaluate_stage(c: &PipelineConfig) -> Result<(EvalReport, String)> {
    let world = read_world(&c.world_path())?;
    let events = read_event_file(&c.events_path())?;
    let held_out = hold_out_last(&events);
    if held_out.points.is_empty() {
        return Err(GatewayError::runtime("no held-out events; every user has fewer than two events"));
    }
    let graph = read_graph(&c.graph_path())?;
    let matcher = read_matcher_file(&c.model_path(MATCHER_MODEL))?;
    let table = read_table(&c.model_path(MATCHER_TABLE), &graph)?;
    let plain = read_predictor_file(&c.model_path(PREDICTOR_PLAIN))?;
    let fused = read_predictor_file(&c.model_path(PREDICTOR_FUSED))?;
    let art = Artifacts {
        graph: &graph,
        matcher: &matcher,
        matcher_table: &table,
        plain: &plain,
        fused: &fused,
    };
    let e = evaluate(&c.experiment, c.seed, &world, &held_out, &art).map_err(fail)?;
    let path = c.out.join("report.json");
    std::fs::write(&path, e.report.to_json()).map_err(|e| at(&path)(e.to_string()))?;
    let mut text = e.report.table();
    if let Some(demo) = demonstration(&fused, &graph, c.experiment.beta, c.service.top_k)? {
        text += "\n";
        text += &render_demo(&demo);
        let path = c.out.join("demo.json");
        let json = serde_json::to_string_pretty(&demo).map_err(fail)?;
        std::fs::write(&path, json).map_err(|e| at(&path)(e.to_string()))?;
    }
    Ok((e.report, text))
}

/// `validate`: findings of a graph file; any finding is a failure.
pub fn validate(path: &Path) -> Result<ValidationReport> {
    let graph = read_graph(path)?;
    Ok(graph.validate())
}

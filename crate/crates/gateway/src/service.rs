//! Request handling over frozen artifacts. Handlers are plain functions of
//! (state, request) so they can be tested without a socket; the router only
//! adds JSON extraction and status codes.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use intentkg_core::graph::{canonicalize, ConceptGraph, Edge, EdgeKind, FrozenGraph, Node, NodeId, NodeKind, Provenance};
use intentkg_core::mining::UserEvent;
use intentkg_core::predictor::{predict_top_k, PredictorModel, RankedIntent, RuleMatch, Slot};
use intentkg_core::repr::{label_item, IntentEmbeddingTable, IntentScore, Item, ItemKind, TrainedMatcher};
use intentkg_core::sim::eval_rules;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, ServiceConfig};
use crate::error::{GatewayError, Result};
use crate::stages::{self, MATCHER_MODEL, MATCHER_TABLE, PREDICTOR_FUSED};

/// Everything a request may read. Built once at startup, never mutated.
pub struct ServiceState {
    pub graph: FrozenGraph,
    pub predictor: PredictorModel,
    pub matcher: TrainedMatcher,
    pub matcher_table: IntentEmbeddingTable,
    pub defaults: ServiceConfig,
    graph_fp: String,
    model_fp: String,
    matcher_fp: String,
}

impl ServiceState {
    pub fn new(
        graph: ConceptGraph,
        predictor: PredictorModel,
        matcher: TrainedMatcher,
        matcher_table: IntentEmbeddingTable,
        defaults: ServiceConfig,
    ) -> Self {
        ServiceState {
            graph_fp: graph.fingerprint(),
            model_fp: predictor.fingerprint(),
            matcher_fp: matcher.fingerprint(),
            graph: graph.freeze(),
            predictor,
            matcher,
            matcher_table,
            defaults,
        }
    }

    /// The fused predictor, the matcher and the graph named by the config.
    pub fn load(c: &PipelineConfig) -> Result<Self> {
        let graph = stages::read_graph(&c.graph_path())?;
        let report = graph.validate();
        if !report.is_clean() {
            return Err(GatewayError::runtime(format!(
                "{}: {} validation findings",
                c.graph_path().display(),
                report.findings.len()
            )));
        }
        let predictor = stages::read_predictor_file(&c.model_path(PREDICTOR_FUSED))?;
        let matcher = stages::read_matcher_file(&c.model_path(MATCHER_MODEL))?;
        let table = stages::read_table(&c.model_path(MATCHER_TABLE), &graph)?;
        Ok(Self::new(graph, predictor, matcher, table, c.service.clone()))
    }

    fn fingerprints(&self, keys: &[&'static str]) -> BTreeMap<&'static str, String> {
        keys.iter()
            .map(|&k| {
                let v = match k {
                    "graph" => &self.graph_fp,
                    "model" => &self.model_fp,
                    _ => &self.matcher_fp,
                };
                (k, v.clone())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

impl ApiError {
    fn new(status: u16, code: &str, field: Option<&str>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.into(),
            field: field.map(str::to_string),
            message: message.into(),
        }
    }

    fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self::new(400, "VALIDATION", Some(field), message)
    }

    fn malformed(message: String) -> Self {
        Self::new(400, "MALFORMED", None, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::BAD_REQUEST);
        (status, Json(self)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventIn {
    pub intent: String,
    pub loc: String,
    pub ts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub events: Vec<EventIn>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub use_rules: Option<bool>,
    #[serde(default)]
    pub slots: Option<Vec<Slot>>,
    #[serde(default)]
    pub include_distributions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub top_k: Vec<RankedIntent>,
    pub explanations: Vec<RuleMatch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distributions: Option<Vec<Vec<f64>>>,
    pub fingerprints: BTreeMap<String, String>,
}

fn owned(m: BTreeMap<&'static str, String>) -> BTreeMap<String, String> {
    m.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn handle_predict(state: &ServiceState, req: &PredictRequest) -> std::result::Result<PredictResponse, ApiError> {
    let model = &state.predictor;
    if req.events.is_empty() {
        return Err(ApiError::invalid("events", "at least one event is required"));
    }
    let mut context = Vec::with_capacity(req.events.len());
    for (i, e) in req.events.iter().enumerate() {
        let label = canonicalize(&e.intent);
        if !model.vocab.intents.contains(&label) {
            return Err(ApiError::new(
                400,
                "UNKNOWN_INTENT",
                Some(&format!("events[{i}].intent")),
                format!("unknown intent {:?}", e.intent),
            ));
        }
        context.push(UserEvent {
            user: "request".into(),
            ts: e.ts,
            loc: e.loc.clone(),
            intent: Some(label),
            item: None,
        });
    }
    if context.windows(2).any(|w| w[1].ts < w[0].ts) {
        return Err(ApiError::invalid("events", "events must be sorted by ts"));
    }
    let k = req.k.unwrap_or(state.defaults.top_k);
    if k == 0 {
        return Err(ApiError::invalid("k", "k must be positive"));
    }
    let beta = req.beta.unwrap_or(state.defaults.beta);
    if !beta.is_finite() || beta < 0.0 {
        return Err(ApiError::invalid("beta", "beta must be finite and non-negative"));
    }
    let last = context.last().expect("non-empty");
    let slots = req.slots.clone().unwrap_or_else(|| {
        vec![Slot {
            ts: last.ts,
            loc: None,
        }]
    });
    let horizon = model.config.horizon;
    if slots.is_empty() || slots.len() > horizon {
        return Err(ApiError::invalid("slots", format!("between 1 and {horizon} slots")));
    }
    let graph: &ConceptGraph = &state.graph;
    let graph = req.use_rules.unwrap_or(true).then_some(graph);
    let r = predict_top_k(model, &context, &slots, k, graph, &eval_rules(beta))
        .map_err(|e| ApiError::invalid("events", e.to_string()))?;
    Ok(PredictResponse {
        top_k: r.top_k,
        explanations: r.explanations,
        distributions: req.include_distributions.then_some(r.distributions),
        fingerprints: owned(state.fingerprints(&["graph", "model"])),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub kind: Option<ItemKind>,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub image: Option<Vec<f64>>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelResponse {
    pub labels: Vec<IntentScore>,
    pub fingerprints: BTreeMap<String, String>,
}

pub fn handle_label_item(state: &ServiceState, req: &LabelRequest) -> std::result::Result<LabelResponse, ApiError> {
    if req.text.trim().is_empty() && req.image.is_none() {
        return Err(ApiError::invalid("text", "an item needs text or an image vector"));
    }
    let top_k = req.top_k.unwrap_or(state.defaults.label_top_k);
    if top_k == 0 {
        return Err(ApiError::invalid("top_k", "top_k must be positive"));
    }
    let threshold = req.threshold.unwrap_or(state.defaults.label_threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ApiError::invalid("threshold", "threshold must lie in [0, 1]"));
    }
    if let Some(img) = &req.image {
        if img.len() != state.matcher.image_dim {
            return Err(ApiError::invalid(
                "image",
                format!("expected {} values, got {}", state.matcher.image_dim, img.len()),
            ));
        }
    }
    let item = Item {
        id: req.id.clone().unwrap_or_else(|| "request".into()),
        kind: req.kind.unwrap_or(ItemKind::Service),
        text: req.text.clone(),
        image: req.image.clone(),
    };
    let v = state
        .matcher
        .item_vector(&item)
        .map_err(|e| ApiError::invalid("text", e.to_string()))?;
    let labels = label_item(&v, &state.matcher_table, &state.matcher.params, top_k, threshold)
        .map_err(|e| ApiError::invalid("text", e.to_string()))?;
    Ok(LabelResponse {
        labels,
        fingerprints: owned(state.fingerprints(&["graph", "matcher"])),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeQuery {
    pub id: Option<u64>,
    pub label: Option<String>,
    pub kind: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeOut {
    pub src: NodeId,
    pub src_label: String,
    pub kind: EdgeKind,
    pub dst: NodeId,
    pub dst_label: String,
    pub confidence: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOut {
    pub path: Vec<String>,
    pub ids: Vec<NodeId>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeResponse {
    pub node: Node,
    pub out_edges: Vec<EdgeOut>,
    pub in_edges: Vec<EdgeOut>,
    pub chains: Vec<ChainOut>,
    pub fingerprints: BTreeMap<String, String>,
}

fn parse_kind(s: &str) -> Option<NodeKind> {
    NodeKind::ALL.into_iter().find(|k| k.to_string().eq_ignore_ascii_case(s))
}

pub fn handle_kg_node(state: &ServiceState, q: &NodeQuery) -> std::result::Result<NodeResponse, ApiError> {
    let g: &ConceptGraph = &state.graph;
    let kinds: Vec<NodeKind> = match &q.kind {
        Some(k) => vec![parse_kind(k).ok_or_else(|| ApiError::invalid("kind", format!("unknown node kind {k:?}")))?],
        None => NodeKind::ALL.to_vec(),
    };
    let not_found = |what: String| ApiError::new(404, "NODE_NOT_FOUND", None, format!("no node {what}"));
    let id = match (q.id, &q.label) {
        (Some(id), _) => {
            let id = NodeId(id);
            match g.node(id) {
                Some(n) if kinds.contains(&n.kind) => id,
                _ => return Err(not_found(format!("with id {}", id.0))),
            }
        }
        (None, Some(label)) => kinds
            .iter()
            .find_map(|&k| g.find(k, label))
            .ok_or_else(|| not_found(format!("labeled {label:?}")))?,
        (None, None) => return Err(ApiError::invalid("id", "give an id or a label")),
    };
    let edge = |e: &Edge| EdgeOut {
        src: e.src,
        src_label: g.label(e.src).to_string(),
        kind: e.kind,
        dst: e.dst,
        dst_label: g.label(e.dst).to_string(),
        confidence: e.confidence,
        provenance: e.provenance,
    };
    let out_edges = EdgeKind::ALL.iter().flat_map(|&k| g.out_edges(id, k).map(edge)).collect();
    let in_edges = EdgeKind::ALL.iter().flat_map(|&k| g.in_edges(id, k).map(edge)).collect();
    let node = g.node(id).expect("looked up").clone();
    let chains = if node.kind == NodeKind::Intent {
        g.consequent_chains(id, 2)
            .expect("intent node")
            .into_iter()
            .map(|c| ChainOut {
                path: c.path.iter().map(|&n| g.label(n).to_string()).collect(),
                ids: c.path,
                confidence: c.confidence,
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(NodeResponse {
        node,
        out_edges,
        in_edges,
        chains,
        fingerprints: owned(state.fingerprints(&["graph"])),
    })
}

type Shared = State<Arc<ServiceState>>;
type Reply<T> = std::result::Result<Json<T>, ApiError>;

async fn predict(State(s): Shared, body: std::result::Result<Json<PredictRequest>, JsonRejection>) -> Reply<PredictResponse> {
    let Json(req) = body.map_err(|e| ApiError::malformed(e.body_text()))?;
    handle_predict(&s, &req).map(Json)
}

async fn label(State(s): Shared, body: std::result::Result<Json<LabelRequest>, JsonRejection>) -> Reply<LabelResponse> {
    let Json(req) = body.map_err(|e| ApiError::malformed(e.body_text()))?;
    handle_label_item(&s, &req).map(Json)
}

async fn kg_node(State(s): Shared, q: std::result::Result<Query<NodeQuery>, QueryRejection>) -> Reply<NodeResponse> {
    let Query(q) = q.map_err(|e| ApiError::malformed(e.body_text()))?;
    handle_kg_node(&s, &q).map(Json)
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/v1/predict", post(predict))
        .route("/v1/label_item", post(label))
        .route("/v1/kg/node", get(kg_node))
        .with_state(state)
}

/// Bind and serve until the process is stopped.
pub fn serve(state: ServiceState, host: &str, port: u16) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(GatewayError::runtime)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| GatewayError::runtime(format!("cannot bind {host}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(GatewayError::runtime)?;
        println!("serving on http://{addr}");
        axum::serve(listener, router(Arc::new(state)))
            .await
            .map_err(GatewayError::runtime)
    })
}

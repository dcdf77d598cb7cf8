//! Graph construction: intent phrase extraction, node alignment, sememe
//! lookup, and the isA and Consequent relation miners.

mod align;
mod build;
mod consequent;
mod events;
mod extract;
mod isa;
mod lexicon;

pub use align::{align_nodes, Cluster};
pub use build::{build_graph, BuildConfig, BuildSummary};
pub use consequent::{learn_structure, mine_consequent, ConsequentConfig, Network, Occurrences, PairStats};
pub use events::{read_events, segment_sessions, write_events, Session, UserEvent};
pub use extract::{extract_intent_candidates, IntentCandidate, WINDOW};
pub use isa::{mine_isa_embedding, mine_isa_lexical, product_neighbors, DEPTH_DECAY};
pub use lexicon::{assign_sememes, Lexicon};

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ConceptGraph, EdgeKind, GraphError, NodeKind, Provenance};

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("invalid lexicon: {0}")]
    Lexicon(String),
    #[error("event of user {user} at {ts} has no intent label")]
    Unlabeled { user: String, ts: u64 },
    #[error("no sessions to mine")]
    NoSessions,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A mined relation between two intents, identified by canonical label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRelation {
    pub src: String,
    pub kind: EdgeKind,
    pub dst: String,
    pub score: f64,
    pub evidence: BTreeMap<String, f64>,
}

impl ScoredRelation {
    pub fn key(&self) -> (&str, EdgeKind, &str) {
        (&self.src, self.kind, &self.dst)
    }
}

/// `src \t kind \t dst \t score \t evidence-json`, one relation per line.
pub fn write_relations<W: Write>(relations: &[ScoredRelation], mut out: W) -> Result<(), MiningError> {
    for r in relations {
        let evidence = serde_json::to_string(&r.evidence).expect("evidence serializes");
        writeln!(out, "{}\t{}\t{}\t{}\t{}", r.src, r.kind, r.dst, r.score, evidence)?;
    }
    Ok(())
}

pub fn read_relations<R: BufRead>(input: R) -> Result<Vec<ScoredRelation>, MiningError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| MiningError::Parse { line: i + 1, message: m };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        let kind = EdgeKind::ALL
            .into_iter()
            .find(|k| k.to_string() == f[1])
            .ok_or_else(|| err(format!("unknown edge kind {:?}", f[1])))?;
        let score: f64 = f[3].parse().map_err(|e| err(format!("bad score: {e}")))?;
        let evidence = serde_json::from_str(f[4]).map_err(|e| err(format!("bad evidence: {e}")))?;
        out.push(ScoredRelation {
            src: f[0].to_string(),
            kind,
            dst: f[2].to_string(),
            score,
            evidence,
        });
    }
    Ok(out)
}

/// Outcome of inserting mined relations into a graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ApplyReport {
    pub inserted: usize,
    pub below_threshold: usize,
    pub already_present: usize,
    /// Relations naming an intent the graph does not have.
    pub unknown: usize,
    /// IsA relations that would close a cycle.
    pub rejected: usize,
}

/// Insert every relation scoring at least `accept_threshold` as an edge.
/// Confidence is the score clamped to [0, 1], or `confidence_of` when given.
pub fn apply_relations(
    graph: &mut ConceptGraph,
    relations: &[ScoredRelation],
    accept_threshold: f64,
    provenance: Provenance,
    confidence_of: impl Fn(&ScoredRelation) -> f64,
) -> ApplyReport {
    let mut report = ApplyReport::default();
    for r in relations {
        if r.score < accept_threshold {
            report.below_threshold += 1;
            continue;
        }
        let (Some(s), Some(d)) = (graph.find(NodeKind::Intent, &r.src), graph.find(NodeKind::Intent, &r.dst)) else {
            report.unknown += 1;
            continue;
        };
        if graph.has_edge(s, r.kind, d) {
            report.already_present += 1;
            continue;
        }
        match graph.add_edge(s, r.kind, d, confidence_of(r).clamp(0.0, 1.0), provenance) {
            Ok(_) => report.inserted += 1,
            Err(_) => report.rejected += 1,
        }
    }
    report
}

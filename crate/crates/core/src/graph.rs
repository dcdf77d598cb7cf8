//! Typed concept graph: four node kinds, four relation kinds, and the
//! endpoint schema that ties them together.
//!
//! The graph is built by a single writer through [`ConceptGraph::add_node`]
//! and [`ConceptGraph::add_edge`], both of which enforce the ontology. Once
//! built it can be frozen into a [`FrozenGraph`] and shared between readers.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Intent,
    Function,
    Product,
    Sememe,
}

impl NodeKind {
    pub const ALL: [NodeKind; 4] = [
        NodeKind::Intent,
        NodeKind::Function,
        NodeKind::Product,
        NodeKind::Sememe,
    ];
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    IsA,
    Consequent,
    Consist,
    Has,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 4] = [
        EdgeKind::IsA,
        EdgeKind::Consequent,
        EdgeKind::Consist,
        EdgeKind::Has,
    ];

    /// Whether an edge of this kind may connect a `src` node to a `dst` node.
    pub fn admits(self, src: NodeKind, dst: NodeKind) -> bool {
        use NodeKind::*;
        match self {
            EdgeKind::IsA => matches!((src, dst), (Intent, Intent) | (Product, Product)),
            EdgeKind::Consequent => matches!((src, dst), (Intent, Intent)),
            EdgeKind::Consist => matches!((src, dst), (Intent, Function) | (Intent, Product)),
            EdgeKind::Has => matches!((src, dst), (Function, Sememe) | (Product, Sememe)),
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Lexical,
    Embedding,
    Bayesian,
    Manual,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub label: String,
    pub aliases: BTreeSet<String>,
    pub attrs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub src: NodeId,
    pub kind: EdgeKind,
    pub dst: NodeId,
    pub confidence: f64,
    pub provenance: Provenance,
}

/// Index of an edge in insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EdgeHandle(pub usize);

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node label must not be empty")]
    EmptyLabel,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no {kind} node labelled {label:?}")]
    UnknownLabel { kind: NodeKind, label: String },
    #[error("node {id} is a {found}, expected {expected}")]
    WrongKind {
        id: NodeId,
        expected: NodeKind,
        found: NodeKind,
    },
    #[error("ontology violation: {kind} edge not allowed from {src_kind} to {dst_kind}")]
    Ontology {
        src_kind: NodeKind,
        kind: EdgeKind,
        dst_kind: NodeKind,
    },
    #[error("IsA edge would close a cycle: {}", fmt_path(.path))]
    Cycle { path: Vec<NodeId> },
    #[error("Consequent self-loop on {0}")]
    SelfLoop(NodeId),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("duplicate {kind} label {label:?}")]
    DuplicateLabel { kind: NodeKind, label: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<GraphError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GraphError {
    /// The error underneath any line-number wrapper.
    pub fn root(&self) -> &GraphError {
        match self {
            GraphError::Line { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            GraphError::Line { line, .. } => Some(*line),
            _ => None,
        }
    }
}

fn fmt_path(path: &[NodeId]) -> String {
    path.iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(" -> ")
}

/// Trim, case-fold and collapse internal whitespace.
pub fn canonicalize(label: &str) -> String {
    label
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default)]
pub struct ConceptGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: Vec<Edge>,
    out_index: HashMap<(NodeId, EdgeKind), Vec<usize>>,
    in_index: HashMap<(NodeId, EdgeKind), Vec<usize>>,
    label_index: HashMap<(NodeKind, String), NodeId>,
    edge_keys: HashMap<(NodeId, EdgeKind, NodeId), usize>,
    next_id: u64,
}

impl ConceptGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Insert a node, or return the existing id when a node of the same kind
    /// and canonical label exists. Aliases are merged either way.
    pub fn add_node<I, S>(&mut self, kind: NodeKind, label: &str, aliases: I) -> Result<NodeId, GraphError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let canonical = canonicalize(label);
        if canonical.is_empty() {
            return Err(GraphError::EmptyLabel);
        }
        let id = match self.label_index.get(&(kind, canonical.clone())) {
            Some(&id) => id,
            None => {
                let id = NodeId(self.next_id);
                self.next_id += 1;
                self.label_index.insert((kind, canonical.clone()), id);
                self.nodes.insert(
                    id,
                    Node {
                        id,
                        kind,
                        label: canonical,
                        aliases: BTreeSet::new(),
                        attrs: BTreeMap::new(),
                    },
                );
                id
            }
        };
        let node = self.nodes.get_mut(&id).expect("indexed node exists");
        for alias in aliases {
            let alias = alias.into();
            if !alias.trim().is_empty() {
                node.aliases.insert(alias.trim().to_string());
            }
        }
        Ok(id)
    }

    pub fn set_attr(&mut self, id: NodeId, key: &str, value: &str) -> Result<(), GraphError> {
        let node = self.nodes.get_mut(&id).ok_or(GraphError::UnknownNode(id))?;
        node.attrs.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Insert an edge after checking the endpoint schema, the confidence
    /// range and (for IsA) acyclicity. Re-adding an existing
    /// `(src, kind, dst)` triple returns the original handle unchanged.
    pub fn add_edge(
        &mut self,
        src: NodeId,
        kind: EdgeKind,
        dst: NodeId,
        confidence: f64,
        provenance: Provenance,
    ) -> Result<EdgeHandle, GraphError> {
        let src_kind = self.node(src).ok_or(GraphError::UnknownNode(src))?.kind;
        let dst_kind = self.node(dst).ok_or(GraphError::UnknownNode(dst))?.kind;
        if !kind.admits(src_kind, dst_kind) {
            return Err(GraphError::Ontology {
                src_kind,
                kind,
                dst_kind,
            });
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GraphError::Confidence(confidence));
        }
        if let Some(&idx) = self.edge_keys.get(&(src, kind, dst)) {
            return Ok(EdgeHandle(idx));
        }
        match kind {
            EdgeKind::Consequent if src == dst => return Err(GraphError::SelfLoop(src)),
            EdgeKind::IsA => {
                if src == dst {
                    return Err(GraphError::Cycle {
                        path: vec![src, src],
                    });
                }
                if let Some(mut path) = self.path(dst, src, EdgeKind::IsA) {
                    path.push(dst);
                    return Err(GraphError::Cycle { path });
                }
            }
            _ => {}
        }
        Ok(self.push_edge(Edge {
            src,
            kind,
            dst,
            confidence,
            provenance,
        }))
    }

    /// Store an edge without any ontology checks. Only for loaders that
    /// validate separately and for tests that need broken graphs.
    #[doc(hidden)]
    pub fn add_edge_unchecked(&mut self, edge: Edge) -> EdgeHandle {
        self.push_edge(edge)
    }

    fn push_edge(&mut self, edge: Edge) -> EdgeHandle {
        let idx = self.edges.len();
        self.out_index.entry((edge.src, edge.kind)).or_default().push(idx);
        self.in_index.entry((edge.dst, edge.kind)).or_default().push(idx);
        self.edge_keys.entry((edge.src, edge.kind, edge.dst)).or_insert(idx);
        self.edges.push(edge);
        EdgeHandle(idx)
    }

    /// Breadth-first path from `from` to `to` along edges of `kind`.
    fn path(&self, from: NodeId, to: NodeId, kind: EdgeKind) -> Option<Vec<NodeId>> {
        let mut parent: HashMap<NodeId, NodeId> = HashMap::new();
        let mut queue = std::collections::VecDeque::from([from]);
        let mut seen = HashSet::from([from]);
        while let Some(cur) = queue.pop_front() {
            if cur == to {
                let mut path = vec![cur];
                let mut at = cur;
                while let Some(&p) = parent.get(&at) {
                    path.push(p);
                    at = p;
                }
                path.reverse();
                return Some(path);
            }
            for e in self.out_edges(cur, kind) {
                if seen.insert(e.dst) {
                    parent.insert(e.dst, cur);
                    queue.push_back(e.dst);
                }
            }
        }
        None
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, handle: EdgeHandle) -> Option<&Edge> {
        self.edges.get(handle.0)
    }

    /// Ids of all nodes of `kind`, ascending.
    pub fn ids_of_kind(&self, kind: NodeKind) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.kind == kind)
            .map(|n| n.id)
            .collect()
    }

    /// Look up by canonical label, falling back to aliases.
    pub fn find(&self, kind: NodeKind, label: &str) -> Option<NodeId> {
        let canonical = canonicalize(label);
        if let Some(&id) = self.label_index.get(&(kind, canonical.clone())) {
            return Some(id);
        }
        self.nodes
            .values()
            .find(|n| n.kind == kind && n.aliases.iter().any(|a| canonicalize(a) == canonical))
            .map(|n| n.id)
    }

    pub fn expect_kind(&self, id: NodeId, kind: NodeKind) -> Result<&Node, GraphError> {
        let node = self.node(id).ok_or(GraphError::UnknownNode(id))?;
        if node.kind != kind {
            return Err(GraphError::WrongKind {
                id,
                expected: kind,
                found: node.kind,
            });
        }
        Ok(node)
    }

    pub fn label(&self, id: NodeId) -> &str {
        self.nodes.get(&id).map(|n| n.label.as_str()).unwrap_or("")
    }

    pub fn out_edges(&self, id: NodeId, kind: EdgeKind) -> impl Iterator<Item = &Edge> {
        self.out_index
            .get(&(id, kind))
            .into_iter()
            .flatten()
            .map(move |&i| &self.edges[i])
    }

    pub fn in_edges(&self, id: NodeId, kind: EdgeKind) -> impl Iterator<Item = &Edge> {
        self.in_index
            .get(&(id, kind))
            .into_iter()
            .flatten()
            .map(move |&i| &self.edges[i])
    }

    pub fn has_edge(&self, src: NodeId, kind: EdgeKind, dst: NodeId) -> bool {
        self.edge_keys.contains_key(&(src, kind, dst))
    }

    /// Targets of Consist edges of the given kind hanging off an intent.
    pub fn constituents(&self, intent: NodeId, kind: NodeKind) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .out_edges(intent, EdgeKind::Consist)
            .filter(|e| self.node(e.dst).map(|n| n.kind) == Some(kind))
            .map(|e| e.dst)
            .collect();
        out.sort();
        out
    }

    /// All simple Consequent paths starting at `start` with between 1 and
    /// `max_depth` edges, ordered by length, then by descending product of
    /// edge confidences, then by node ids.
    pub fn consequent_chains(&self, start: NodeId, max_depth: usize) -> Result<Vec<ConsequentChain>, GraphError> {
        self.expect_kind(start, NodeKind::Intent)?;
        let mut out = Vec::new();
        let mut path = vec![start];
        self.chain_dfs(&mut path, 1.0, max_depth, &mut out);
        out.sort_by(|a, b| {
            a.path
                .len()
                .cmp(&b.path.len())
                .then(b.confidence.total_cmp(&a.confidence))
                .then_with(|| a.path.cmp(&b.path))
        });
        Ok(out)
    }

    fn chain_dfs(&self, path: &mut Vec<NodeId>, conf: f64, max_depth: usize, out: &mut Vec<ConsequentChain>) {
        if path.len() > max_depth {
            return;
        }
        let last = *path.last().expect("non-empty path");
        let mut next: Vec<&Edge> = self.out_edges(last, EdgeKind::Consequent).collect();
        next.sort_by_key(|e| e.dst);
        for e in next {
            if path.contains(&e.dst) {
                continue;
            }
            path.push(e.dst);
            let c = conf * e.confidence;
            out.push(ConsequentChain {
                path: path.clone(),
                confidence: c,
            });
            self.chain_dfs(path, c, max_depth, out);
            path.pop();
        }
    }

    /// Order-insensitive comparison of node and edge sets, with confidences
    /// compared bit for bit.
    pub fn structurally_equal(&self, other: &ConceptGraph) -> bool {
        if self.nodes != other.nodes || self.edges.len() != other.edges.len() {
            return false;
        }
        let key = |e: &Edge| (e.src, e.kind, e.dst, e.confidence.to_bits(), e.provenance);
        let mut a: Vec<_> = self.edges.iter().map(key).collect();
        let mut b: Vec<_> = other.edges.iter().map(key).collect();
        a.sort();
        b.sort();
        a == b
    }

    /// Stable fingerprint of the node and edge sets (FNV-1a over a canonical
    /// serialization).
    pub fn fingerprint(&self) -> String {
        let mut h = crate::util::Fnv64::new();
        for n in self.nodes.values() {
            h.write(&n.id.0.to_le_bytes());
            h.write(format!("{:?}", n.kind).as_bytes());
            h.write(n.label.as_bytes());
        }
        let mut edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| (e.src, e.kind, e.dst, e.confidence.to_bits()))
            .collect();
        edges.sort();
        for (s, k, d, c) in edges {
            h.write(&s.0.to_le_bytes());
            h.write(format!("{k:?}").as_bytes());
            h.write(&d.0.to_le_bytes());
            h.write(&c.to_le_bytes());
        }
        format!("{:016x}", h.finish())
    }

    pub fn validate(&self) -> ValidationReport {
        validate_graph(self)
    }

    pub fn freeze(self) -> FrozenGraph {
        FrozenGraph(Arc::new(self))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsequentChain {
    pub path: Vec<NodeId>,
    pub confidence: f64,
}

/// Read-only, cheaply clonable view of a finished graph.
#[derive(Debug, Clone)]
pub struct FrozenGraph(Arc<ConceptGraph>);

impl Deref for FrozenGraph {
    type Target = ConceptGraph;

    fn deref(&self) -> &ConceptGraph {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingCode {
    DanglingEdge,
    IsaCycle,
    SchemaViolation,
    SelfLoop,
    DuplicateLabel,
    ConfidenceRange,
    /// Warning only: an intent without a Consist edge to a Function.
    MissingConsist,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub code: FindingCode,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count(&self, code: FindingCode) -> usize {
        self.findings.iter().filter(|f| f.code == code).count()
    }
}

pub fn validate_graph(graph: &ConceptGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut finding = |code, message: String| report.findings.push(Finding { code, message });

    let mut seen_labels: HashMap<(NodeKind, String), NodeId> = HashMap::new();
    for n in graph.nodes() {
        let canonical = canonicalize(&n.label);
        if let Some(prev) = seen_labels.insert((n.kind, canonical), n.id) {
            finding(
                FindingCode::DuplicateLabel,
                format!("{} and {} share {} label {:?}", prev, n.id, n.kind, n.label),
            );
        }
    }

    for e in graph.edges() {
        let (Some(s), Some(d)) = (graph.node(e.src), graph.node(e.dst)) else {
            finding(
                FindingCode::DanglingEdge,
                format!("{} edge {} -> {} references a missing node", e.kind, e.src, e.dst),
            );
            continue;
        };
        if !e.kind.admits(s.kind, d.kind) {
            finding(
                FindingCode::SchemaViolation,
                format!("{} edge from {} {} to {} {}", e.kind, s.kind, e.src, d.kind, e.dst),
            );
        }
        if e.kind == EdgeKind::Consequent && e.src == e.dst {
            finding(FindingCode::SelfLoop, format!("Consequent self-loop on {}", e.src));
        }
        if !(0.0..=1.0).contains(&e.confidence) {
            finding(
                FindingCode::ConfidenceRange,
                format!("{} edge {} -> {} has confidence {}", e.kind, e.src, e.dst, e.confidence),
            );
        }
    }

    for cycle in isa_cycles(graph) {
        finding(
            FindingCode::IsaCycle,
            format!("IsA cycle {}", fmt_path(&cycle)),
        );
    }

    for id in graph.ids_of_kind(NodeKind::Intent) {
        if graph.constituents(id, NodeKind::Function).is_empty() {
            report.warnings.push(Finding {
                code: FindingCode::MissingConsist,
                message: format!("intent {id} has no Consist edge to a Function"),
            });
        }
    }
    report
}

/// One representative cycle per back edge found by a DFS over IsA edges.
fn isa_cycles(graph: &ConceptGraph) -> Vec<Vec<NodeId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut marks: HashMap<NodeId, Mark> = HashMap::new();
    let mut cycles = Vec::new();
    let mut stack: Vec<NodeId> = Vec::new();

    fn visit(
        graph: &ConceptGraph,
        id: NodeId,
        marks: &mut HashMap<NodeId, Mark>,
        stack: &mut Vec<NodeId>,
        cycles: &mut Vec<Vec<NodeId>>,
    ) {
        marks.insert(id, Mark::Open);
        stack.push(id);
        let mut next: Vec<NodeId> = graph.out_edges(id, EdgeKind::IsA).map(|e| e.dst).collect();
        next.sort();
        for dst in next {
            match marks.get(&dst) {
                Some(Mark::Open) => {
                    let start = stack.iter().position(|&n| n == dst).expect("open node on stack");
                    let mut cycle = stack[start..].to_vec();
                    cycle.push(dst);
                    cycles.push(cycle);
                }
                Some(Mark::Done) => {}
                None => visit(graph, dst, marks, stack, cycles),
            }
        }
        stack.pop();
        marks.insert(id, Mark::Done);
    }

    // edge sources too, so cycles through dangling ids are not missed
    let starts: Vec<NodeId> = graph
        .nodes()
        .map(|n| n.id)
        .chain(graph.edges().iter().filter(|e| e.kind == EdgeKind::IsA).map(|e| e.src))
        .collect();
    for id in starts {
        if !marks.contains_key(&id) {
            visit(graph, id, &mut marks, &mut stack, &mut cycles);
        }
    }
    cycles
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
enum Record {
    Node {
        id: NodeId,
        kind: NodeKind,
        label: String,
        #[serde(default)]
        aliases: BTreeSet<String>,
        #[serde(default)]
        attrs: BTreeMap<String, String>,
    },
    Edge {
        src: NodeId,
        kind: EdgeKind,
        dst: NodeId,
        conf: f64,
        prov: Provenance,
    },
}

/// Write one JSON record per line: all nodes (ascending id), then all edges
/// in insertion order.
pub fn save_graph<W: Write>(graph: &ConceptGraph, mut out: W) -> Result<(), GraphError> {
    for n in graph.nodes() {
        let rec = Record::Node {
            id: n.id,
            kind: n.kind,
            label: n.label.clone(),
            aliases: n.aliases.clone(),
            attrs: n.attrs.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&rec).map_err(|e| GraphError::Parse(e.to_string()))?)?;
    }
    for e in graph.edges() {
        let rec = Record::Edge {
            src: e.src,
            kind: e.kind,
            dst: e.dst,
            conf: e.confidence,
            prov: e.provenance,
        };
        writeln!(out, "{}", serde_json::to_string(&rec).map_err(|e| GraphError::Parse(e.to_string()))?)?;
    }
    Ok(())
}

/// Inverse of [`save_graph`]. Every record is checked as it is read; errors
/// carry the 1-based line number.
pub fn load_graph<R: BufRead>(input: R) -> Result<ConceptGraph, GraphError> {
    let mut graph = ConceptGraph::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let at = |e: GraphError| GraphError::Line {
            line: lineno,
            source: Box::new(e),
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| at(GraphError::Parse(e.to_string())))?;
        match rec {
            Record::Node {
                id,
                kind,
                label,
                aliases,
                attrs,
            } => graph.insert_loaded_node(id, kind, &label, aliases, attrs).map_err(at)?,
            Record::Edge {
                src,
                kind,
                dst,
                conf,
                prov,
            } => {
                graph.add_edge(src, kind, dst, conf, prov).map_err(at)?;
            }
        }
    }
    Ok(graph)
}

impl ConceptGraph {
    fn insert_loaded_node(
        &mut self,
        id: NodeId,
        kind: NodeKind,
        label: &str,
        aliases: BTreeSet<String>,
        attrs: BTreeMap<String, String>,
    ) -> Result<(), GraphError> {
        let canonical = canonicalize(label);
        if canonical.is_empty() {
            return Err(GraphError::EmptyLabel);
        }
        if self.nodes.contains_key(&id) {
            return Err(GraphError::DuplicateId(id));
        }
        if self.label_index.contains_key(&(kind, canonical.clone())) {
            return Err(GraphError::DuplicateLabel {
                kind,
                label: canonical,
            });
        }
        self.label_index.insert((kind, canonical.clone()), id);
        self.nodes.insert(
            id,
            Node {
                id,
                kind,
                label: canonical,
                aliases,
                attrs,
            },
        );
        self.next_id = self.next_id.max(id.0 + 1);
        Ok(())
    }
}

/// The small hand-built subgraph around the movie/taxi/house examples:
/// intents with their functions, products and sememes, product and intent
/// hierarchies, and the consequent chain taxi -> tickets -> snacks.
pub fn example_graph() -> ConceptGraph {
    let mut g = ConceptGraph::new();
    let m = Provenance::Manual;
    let intent = |g: &mut ConceptGraph, label: &str, func: &str, prod: &str, sememes: &[&str]| {
        let i = g.add_node(NodeKind::Intent, label, None::<String>).unwrap();
        let f = g.add_node(NodeKind::Function, func, None::<String>).unwrap();
        let p = g.add_node(NodeKind::Product, prod, None::<String>).unwrap();
        g.add_edge(i, EdgeKind::Consist, f, 1.0, m).unwrap();
        g.add_edge(i, EdgeKind::Consist, p, 1.0, m).unwrap();
        for s in sememes {
            let s = g.add_node(NodeKind::Sememe, s, None::<String>).unwrap();
            g.add_edge(p, EdgeKind::Has, s, 1.0, m).unwrap();
        }
        i
    };
    let taxi = intent(&mut g, "take an internet taxi", "take", "internet taxi", &["vehicle", "travel"]);
    let tickets = intent(&mut g, "buy movie tickets", "buy", "movie ticket", &["coupon", "look", "shows"]);
    let snacks = intent(&mut g, "buy snacks", "buy", "snack", &["food", "eat"]);
    intent(&mut g, "order coffee", "order", "coffee", &["drinks", "drink"]);
    let house = intent(&mut g, "buy a house", "buy", "house", &["house", "live"]);
    let renovate = intent(&mut g, "renovate a house", "renovate", "house", &["house", "live"]);
    let rent_iphone = intent(&mut g, "rent an iPhone13", "rent", "iPhone13", &["tool", "communicate"]);
    let rent_phone = intent(&mut g, "rent a mobile phone", "rent", "mobile phone", &["tool", "communicate"]);
    let buy_iphone = intent(&mut g, "buy an iPhone13", "buy", "iPhone13", &["tool", "communicate"]);
    let buy_phone = intent(&mut g, "buy a mobile phone", "buy", "mobile phone", &["tool", "communicate"]);

    g.add_node(NodeKind::Product, "movie ticket", ["电影票"]).unwrap();
    for f in ["take", "buy", "order", "renovate", "rent"] {
        let f = g.find(NodeKind::Function, f).unwrap();
        let s = g.add_node(NodeKind::Sememe, "act", None::<String>).unwrap();
        g.add_edge(f, EdgeKind::Has, s, 1.0, m).unwrap();
    }
    let iphone = g.find(NodeKind::Product, "iphone13").unwrap();
    let phone = g.find(NodeKind::Product, "mobile phone").unwrap();
    g.add_edge(iphone, EdgeKind::IsA, phone, 1.0, m).unwrap();
    g.add_edge(rent_iphone, EdgeKind::IsA, rent_phone, 1.0, m).unwrap();
    g.add_edge(buy_iphone, EdgeKind::IsA, buy_phone, 1.0, m).unwrap();
    g.add_edge(taxi, EdgeKind::Consequent, tickets, 0.8, m).unwrap();
    g.add_edge(tickets, EdgeKind::Consequent, snacks, 0.9, m).unwrap();
    g.add_edge(house, EdgeKind::Consequent, renovate, 1.0, m).unwrap();
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(g: &mut ConceptGraph, kind: NodeKind, label: &str) -> NodeId {
        g.add_node(kind, label, None::<String>).unwrap()
    }

    #[test]
    fn add_node_is_idempotent() {
        let mut g = ConceptGraph::new();
        let a = node(&mut g, NodeKind::Intent, "buy movie tickets");
        let b = node(&mut g, NodeKind::Intent, "  Buy   movie tickets ");
        assert_eq!(a, b);
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn aliases_are_merged_and_searchable() {
        let mut g = ConceptGraph::new();
        let id = g.add_node(NodeKind::Product, "movie ticket", ["电影票"]).unwrap();
        assert!(g.node(id).unwrap().aliases.contains("电影票"));
        assert_eq!(g.find(NodeKind::Product, "电影票"), Some(id));
        g.add_node(NodeKind::Product, "movie ticket", ["film ticket"]).unwrap();
        assert_eq!(g.node(id).unwrap().aliases.len(), 2);
    }

    #[test]
    fn empty_label_rejected() {
        let mut g = ConceptGraph::new();
        assert!(matches!(
            g.add_node(NodeKind::Intent, "   ", None::<String>),
            Err(GraphError::EmptyLabel)
        ));
    }

    #[test]
    fn schema_is_enforced() {
        let mut g = ConceptGraph::new();
        let x = node(&mut g, NodeKind::Intent, "rent an iPhone13");
        let y = node(&mut g, NodeKind::Intent, "rent a mobile phone");
        let p = node(&mut g, NodeKind::Product, "mobile phone");
        g.add_edge(x, EdgeKind::IsA, y, 1.0, Provenance::Manual).unwrap();
        let err = g.add_edge(x, EdgeKind::IsA, p, 1.0, Provenance::Manual).unwrap_err();
        match err {
            GraphError::Ontology {
                src_kind, dst_kind, ..
            } => {
                assert_eq!(src_kind, NodeKind::Intent);
                assert_eq!(dst_kind, NodeKind::Product);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn consequent_between_intents_accepted() {
        let mut g = ConceptGraph::new();
        let a = node(&mut g, NodeKind::Intent, "buy a house");
        let b = node(&mut g, NodeKind::Intent, "renovate a house");
        assert!(g.add_edge(a, EdgeKind::Consequent, b, 1.0, Provenance::Manual).is_ok());
        assert!(matches!(
            g.add_edge(a, EdgeKind::Consequent, a, 1.0, Provenance::Manual),
            Err(GraphError::SelfLoop(_))
        ));
        // cycles among distinct intents are fine for Consequent
        assert!(g.add_edge(b, EdgeKind::Consequent, a, 1.0, Provenance::Manual).is_ok());
    }

    #[test]
    fn isa_two_cycle_reports_path() {
        let mut g = ConceptGraph::new();
        let a = node(&mut g, NodeKind::Intent, "a");
        let b = node(&mut g, NodeKind::Intent, "b");
        g.add_edge(a, EdgeKind::IsA, b, 1.0, Provenance::Manual).unwrap();
        match g.add_edge(b, EdgeKind::IsA, a, 1.0, Provenance::Manual) {
            Err(GraphError::Cycle { path }) => assert_eq!(path, vec![a, b, a]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn confidence_out_of_range_rejected() {
        let mut g = ConceptGraph::new();
        let a = node(&mut g, NodeKind::Intent, "a");
        let b = node(&mut g, NodeKind::Intent, "b");
        assert!(matches!(
            g.add_edge(a, EdgeKind::Consequent, b, 1.5, Provenance::Manual),
            Err(GraphError::Confidence(_))
        ));
    }

    #[test]
    fn empty_graph_validates() {
        assert!(ConceptGraph::new().validate().is_clean());
    }

    #[test]
    fn injected_self_loop_found() {
        let mut g = ConceptGraph::new();
        let a = node(&mut g, NodeKind::Intent, "a");
        g.add_edge_unchecked(Edge {
            src: a,
            kind: EdgeKind::Consequent,
            dst: a,
            confidence: 1.0,
            provenance: Provenance::Manual,
        });
        let report = g.validate();
        assert_eq!(report.findings.len(), 1);
        assert_eq!(report.count(FindingCode::SelfLoop), 1);
    }

    #[test]
    fn injected_dangling_and_cycle_found() {
        let mut g = ConceptGraph::new();
        let a = node(&mut g, NodeKind::Product, "a");
        let b = node(&mut g, NodeKind::Product, "b");
        g.add_edge(a, EdgeKind::IsA, b, 1.0, Provenance::Manual).unwrap();
        g.add_edge_unchecked(Edge {
            src: b,
            kind: EdgeKind::IsA,
            dst: a,
            confidence: 1.0,
            provenance: Provenance::Manual,
        });
        g.add_edge_unchecked(Edge {
            src: a,
            kind: EdgeKind::Has,
            dst: NodeId(999),
            confidence: 1.0,
            provenance: Provenance::Manual,
        });
        let report = g.validate();
        assert_eq!(report.count(FindingCode::IsaCycle), 1);
        assert_eq!(report.count(FindingCode::DanglingEdge), 1);
    }

    #[test]
    fn chain_example() {
        let g = example_graph();
        let taxi = g.find(NodeKind::Intent, "take an internet taxi").unwrap();
        let tickets = g.find(NodeKind::Intent, "buy movie tickets").unwrap();
        let snacks = g.find(NodeKind::Intent, "buy snacks").unwrap();
        let chains = g.consequent_chains(taxi, 2).unwrap();
        let paths: Vec<_> = chains.iter().map(|c| c.path.clone()).collect();
        assert_eq!(paths, vec![vec![taxi, tickets], vec![taxi, tickets, snacks]]);
        assert!((chains[1].confidence - 0.72).abs() < 1e-12);
    }

    #[test]
    fn isolated_intent_has_no_chains() {
        let g = example_graph();
        let coffee = g.find(NodeKind::Intent, "order coffee").unwrap();
        assert!(g.consequent_chains(coffee, 3).unwrap().is_empty());
    }

    #[test]
    fn chains_require_intent() {
        let g = example_graph();
        let f = g.find(NodeKind::Function, "buy").unwrap();
        assert!(matches!(g.consequent_chains(f, 2), Err(GraphError::WrongKind { .. })));
        assert!(matches!(
            g.consequent_chains(NodeId(12345), 2),
            Err(GraphError::UnknownNode(_))
        ));
    }

    #[test]
    fn diamond_has_four_paths() {
        let mut g = ConceptGraph::new();
        let [a, b, c, d] = ["a", "b", "c", "d"].map(|l| node(&mut g, NodeKind::Intent, l));
        for (s, t) in [(a, b), (a, c), (b, d), (c, d)] {
            g.add_edge(s, EdgeKind::Consequent, t, 0.5, Provenance::Manual).unwrap();
        }
        let chains = g.consequent_chains(a, 2).unwrap();
        let paths: Vec<_> = chains.into_iter().map(|c| c.path).collect();
        assert_eq!(paths, vec![vec![a, b], vec![a, c], vec![a, b, d], vec![a, c, d]]);
    }

    #[test]
    fn example_graph_is_clean() {
        let report = example_graph().validate();
        assert!(report.is_clean(), "{:?}", report.findings);
    }

    #[test]
    fn round_trip_preserves_structure() {
        let g = example_graph();
        let mut buf = Vec::new();
        save_graph(&g, &mut buf).unwrap();
        let back = load_graph(buf.as_slice()).unwrap();
        assert!(g.structurally_equal(&back));
        assert_eq!(g.fingerprint(), back.fingerprint());
    }

    #[test]
    fn truncated_file_reports_line() {
        let g = example_graph();
        let mut buf = Vec::new();
        save_graph(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let keep = 5;
        let mut truncated = lines[..keep].join("\n");
        truncated.push('\n');
        truncated.push_str(&lines[keep][..lines[keep].len() / 2]);
        let err = load_graph(truncated.as_bytes()).unwrap_err();
        assert_eq!(err.line(), Some(keep + 1));
        assert!(matches!(err.root(), GraphError::Parse(_)));
    }

    #[test]
    fn schema_violating_record_reports_line() {
        let text = concat!(
            "{\"t\":\"node\",\"id\":0,\"kind\":\"Intent\",\"label\":\"buy snacks\",\"aliases\":[],\"attrs\":{}}\n",
            "{\"t\":\"node\",\"id\":1,\"kind\":\"Sememe\",\"label\":\"food\",\"aliases\":[],\"attrs\":{}}\n",
            "{\"t\":\"edge\",\"src\":0,\"kind\":\"Has\",\"dst\":1,\"conf\":1.0,\"prov\":\"manual\"}\n",
        );
        let err = load_graph(text.as_bytes()).unwrap_err();
        assert_eq!(err.line(), Some(3));
        assert!(matches!(err.root(), GraphError::Ontology { .. }));
    }

    #[test]
    fn edge_before_node_is_rejected() {
        let text = "{\"t\":\"edge\",\"src\":0,\"kind\":\"IsA\",\"dst\":1,\"conf\":1.0,\"prov\":\"manual\"}\n";
        let err = load_graph(text.as_bytes()).unwrap_err();
        assert_eq!(err.line(), Some(1));
        assert!(matches!(err.root(), GraphError::UnknownNode(_)));
    }
}

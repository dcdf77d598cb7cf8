use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{align_nodes, assign_sememes, extract_intent_candidates, IntentCandidate, Lexicon, MiningError};
use crate::graph::{ConceptGraph, EdgeKind, NodeId, NodeKind, Provenance};
use crate::repr::{TextEncoder, TextEncoderConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    /// Candidates seen fewer times are dropped.
    pub min_support: usize,
    /// Cosine threshold for merging surface variants of the same function.
    pub align_threshold: f64,
    pub encoder: TextEncoderConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            min_support: 1,
            align_threshold: 0.95,
            encoder: TextEncoderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildSummary {
    pub candidates: usize,
    pub intents: usize,
    /// Candidates folded into another candidate's node by alignment.
    pub merged: usize,
    pub product_isa: usize,
}

fn product_node(g: &mut ConceptGraph, product: &str, lexicon: &Lexicon) -> Result<NodeId, MiningError> {
    let p = g.add_node(NodeKind::Product, product, None::<String>)?;
    for s in assign_sememes(product, lexicon) {
        let s = g.add_node(NodeKind::Sememe, &s, None::<String>)?;
        g.add_edge(p, EdgeKind::Has, s, 1.0, Provenance::Lexical)?;
    }
    Ok(p)
}

/// Build a graph from a text corpus: extracted intents with their Consist
/// edges, product sememes, and the lexicon's product hierarchy restricted
/// to products that occur.
///
/// Surface variants sharing a function are aligned; a merged candidate is
/// recorded as an alias of the surviving intent.
pub fn build_graph(
    corpus: &[String],
    lexicon: &Lexicon,
    config: &BuildConfig,
) -> Result<(ConceptGraph, BuildSummary), MiningError> {
    let candidates: Vec<IntentCandidate> = extract_intent_candidates(corpus, lexicon)?
        .into_iter()
        .filter(|c| c.support >= config.min_support)
        .collect();
    let encoder = TextEncoder::new(config.encoder.clone());
    let mut by_function: BTreeMap<&str, Vec<&IntentCandidate>> = BTreeMap::new();
    for c in &candidates {
        by_function.entry(&c.function).or_default().push(c);
    }
    let mut summary = BuildSummary {
        candidates: candidates.len(),
        ..Default::default()
    };
    let mut g = ConceptGraph::new();
    for (function, group) in by_function {
        let labels: Vec<String> = group
            .iter()
            .flat_map(|c| std::iter::repeat_n(c.surface.clone(), c.support))
            .collect();
        for cluster in align_nodes(&labels, &encoder, config.align_threshold) {
            let head = group
                .iter()
                .find(|c| c.surface == cluster.canonical)
                .expect("canonical label comes from the group");
            let aliases: Vec<&String> = cluster.members.iter().filter(|m| **m != cluster.canonical).collect();
            summary.merged += aliases.len();
            let i = g.add_node(NodeKind::Intent, &head.surface, aliases)?;
            let f = g.add_node(NodeKind::Function, function, None::<String>)?;
            let p = product_node(&mut g, &head.product, lexicon)?;
            g.add_edge(i, EdgeKind::Consist, f, 1.0, Provenance::Lexical)?;
            g.add_edge(i, EdgeKind::Consist, p, 1.0, Provenance::Lexical)?;
            g.set_attr(i, "support", &cluster.support.to_string())?;
            summary.intents += 1;
        }
    }
    // walk the lexicon hierarchy upward from every product in use
    let mut frontier: Vec<String> = g
        .ids_of_kind(NodeKind::Product)
        .into_iter()
        .map(|p| g.label(p).to_string())
        .collect();
    while let Some(child) = frontier.pop() {
        for (c, parent) in &lexicon.product_isa {
            if *c != child {
                continue;
            }
            let known = g.find(NodeKind::Product, parent).is_some();
            let cid = g.find(NodeKind::Product, c).expect("child present");
            let pid = product_node(&mut g, parent, lexicon)?;
            if !g.has_edge(cid, EdgeKind::IsA, pid) {
                g.add_edge(cid, EdgeKind::IsA, pid, 1.0, Provenance::Lexical)?;
                summary.product_isa += 1;
            }
            if !known {
                frontier.push(parent.clone());
            }
        }
    }
    Ok((g, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::mine_isa_lexical;

    #[test]
    fn corpus_to_graph() {
        let corpus: Vec<String> = [
            "Buy an iPhone13 online",
            "buy an iphone13",
            "buy a mobile phone cheap",
            "take an internet taxi home",
            "buy movie tickets tonight",
            "buy movie tickets",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let (g, summary) = build_graph(&corpus, &Lexicon::bundled(), &BuildConfig::default()).unwrap();
        assert_eq!(summary.intents, 4);
        assert!(g.validate().is_clean(), "{:?}", g.validate());
        let i = g.find(NodeKind::Intent, "buy movie tickets").unwrap();
        assert_eq!(g.node(i).unwrap().attrs["support"], "2");
        // internet taxi -> car -> vehicle pulled in from the lexicon
        assert!(g.find(NodeKind::Product, "vehicle").is_some());
        let rel = mine_isa_lexical(&g);
        assert!(rel.iter().any(|r| r.src == "buy an iphone13" && r.dst == "buy a mobile phone"));
    }
}

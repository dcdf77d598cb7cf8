use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::ScoredRelation;
use crate::graph::{ConceptGraph, EdgeKind, NodeId, NodeKind};
use crate::repr::TextEncoder;
use crate::util::cosine;

/// Per-step decay applied to product paths longer than one edge.
pub const DEPTH_DECAY: f64 = 0.9;

/// Shortest IsA distance from `start` to every product reachable from it.
fn product_depths(graph: &ConceptGraph, start: NodeId) -> BTreeMap<NodeId, usize> {
    let mut depth = BTreeMap::new();
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some((n, d)) = queue.pop_front() {
        for e in graph.out_edges(n, EdgeKind::IsA) {
            if e.dst != start && !depth.contains_key(&e.dst) {
                depth.insert(e.dst, d + 1);
                queue.push_back((e.dst, d + 1));
            }
        }
    }
    depth
}

/// Intents grouped as (function, product) pairs taken from Consist edges.
fn intent_parts(graph: &ConceptGraph) -> Vec<(NodeId, BTreeSet<NodeId>, BTreeSet<NodeId>)> {
    graph
        .ids_of_kind(NodeKind::Intent)
        .into_iter()
        .map(|i| {
            (
                i,
                graph.constituents(i, NodeKind::Function).into_iter().collect(),
                graph.constituents(i, NodeKind::Product).into_iter().collect(),
            )
        })
        .collect()
}

/// `i1 IsA i2` for intents that share a function and whose products are
/// linked by a Product IsA path of length `d`; score `0.9^(d-1)`.
pub fn mine_isa_lexical(graph: &ConceptGraph) -> Vec<ScoredRelation> {
    let parts = intent_parts(graph);
    let mut closure: BTreeMap<NodeId, BTreeMap<NodeId, usize>> = BTreeMap::new();
    for p in graph.ids_of_kind(NodeKind::Product) {
        closure.insert(p, product_depths(graph, p));
    }
    let mut out = Vec::new();
    for (i1, f1, p1) in &parts {
        for (i2, f2, p2) in &parts {
            if i1 == i2 {
                continue;
            }
            let Some(func) = f1.intersection(f2).next() else {
                continue;
            };
            let closure = &closure;
            let depth = p1
                .iter()
                .flat_map(|a| p2.iter().filter_map(move |b| closure[a].get(b).copied()))
                .min();
            if let Some(d) = depth {
                out.push(ScoredRelation {
                    src: graph.label(*i1).to_string(),
                    kind: EdgeKind::IsA,
                    dst: graph.label(*i2).to_string(),
                    score: DEPTH_DECAY.powi(d as i32 - 1),
                    evidence: BTreeMap::from([
                        ("depth".into(), d as f64),
                        ("function".into(), func.0 as f64),
                    ]),
                });
            }
        }
    }
    out.sort_by(|a, b| a.key().cmp(&b.key()));
    out
}

/// Top-`k` other products by cosine similarity of their encoded labels,
/// ties broken by node id, restricted to similarity >= `tau`.
pub fn product_neighbors(
    graph: &ConceptGraph,
    encoder: &TextEncoder,
    k: usize,
    tau: f64,
) -> BTreeMap<NodeId, Vec<(NodeId, f64)>> {
    let products = graph.ids_of_kind(NodeKind::Product);
    let vecs: Vec<Vec<f64>> = products.iter().map(|&p| encoder.encode(graph.label(p))).collect();
    let mut out = BTreeMap::new();
    for (i, &p) in products.iter().enumerate() {
        let mut sims: Vec<(NodeId, f64)> = products
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, &q)| (q, cosine(&vecs[i], &vecs[j])))
            .collect();
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        sims.truncate(k);
        sims.retain(|s| s.1 >= tau);
        out.insert(p, sims);
    }
    out
}

/// Candidate intent IsA relations from product similarity: for each product
/// neighbour pair, every pair of intents sharing a function yields
/// candidates in both directions scored by the product cosine.
pub fn mine_isa_embedding(graph: &ConceptGraph, encoder: &TextEncoder, k: usize, tau: f64) -> Vec<ScoredRelation> {
    assert!(k >= 1, "k must be positive");
    let parts = intent_parts(graph);
    let mut by_product: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for (idx, (_, _, ps)) in parts.iter().enumerate() {
        for p in ps {
            by_product.entry(*p).or_default().push(idx);
        }
    }
    let mut best: BTreeMap<(NodeId, NodeId), (f64, NodeId, NodeId)> = BTreeMap::new();
    for (p, neigh) in product_neighbors(graph, encoder, k, tau) {
        for (q, sim) in neigh {
            for &a in by_product.get(&p).into_iter().flatten() {
                for &b in by_product.get(&q).into_iter().flatten() {
                    let (ia, fa, _) = &parts[a];
                    let (ib, fb, _) = &parts[b];
                    if ia == ib || fa.is_disjoint(fb) {
                        continue;
                    }
                    for (s, d) in [(*ia, *ib), (*ib, *ia)] {
                        let e = best.entry((s, d)).or_insert((sim, p, q));
                        if sim > e.0 {
                            *e = (sim, p, q);
                        }
                    }
                }
            }
        }
    }
    let mut out: Vec<ScoredRelation> = best
        .into_iter()
        .map(|((s, d), (sim, p, q))| ScoredRelation {
            src: graph.label(s).to_string(),
            kind: EdgeKind::IsA,
            dst: graph.label(d).to_string(),
            score: sim,
            evidence: BTreeMap::from([
                ("cosine".into(), sim),
                ("product_a".into(), p.0 as f64),
                ("product_b".into(), q.0 as f64),
            ]),
        })
        .collect();
    out.sort_by(|a, b| a.key().cmp(&b.key()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{example_graph, Provenance};

    fn intent(g: &mut ConceptGraph, f: &str, p: &str) -> NodeId {
        let i = g.add_node(NodeKind::Intent, &format!("{f} {p}"), None::<String>).unwrap();
        let fid = g.add_node(NodeKind::Function, f, None::<String>).unwrap();
        let pid = g.add_node(NodeKind::Product, p, None::<String>).unwrap();
        g.add_edge(i, EdgeKind::Consist, fid, 1.0, Provenance::Manual).unwrap();
        g.add_edge(i, EdgeKind::Consist, pid, 1.0, Provenance::Manual).unwrap();
        i
    }

    #[test]
    fn iphone_is_a_mobile_phone() {
        let rel = mine_isa_lexical(&example_graph());
        let pairs: Vec<_> = rel.iter().map(|r| (r.src.as_str(), r.dst.as_str(), r.score)).collect();
        assert!(pairs.contains(&("buy an iphone13", "buy a mobile phone", 1.0)));
        assert!(pairs.contains(&("rent an iphone13", "rent a mobile phone", 1.0)));
        assert!(!pairs.iter().any(|p| p.0 == "rent an iphone13" && p.1 == "buy a mobile phone"));
    }

    #[test]
    fn depth_three_scores_point_eight_one() {
        let mut g = ConceptGraph::new();
        let a = intent(&mut g, "buy", "a");
        let d = intent(&mut g, "buy", "d");
        let pid = |g: &ConceptGraph, l: &str| g.find(NodeKind::Product, l).unwrap();
        let b = g.add_node(NodeKind::Product, "b", None::<String>).unwrap();
        let c = g.add_node(NodeKind::Product, "c", None::<String>).unwrap();
        g.add_edge(pid(&g, "a"), EdgeKind::IsA, b, 1.0, Provenance::Manual).unwrap();
        g.add_edge(b, EdgeKind::IsA, c, 1.0, Provenance::Manual).unwrap();
        g.add_edge(c, EdgeKind::IsA, pid(&g, "d"), 1.0, Provenance::Manual).unwrap();
        let rel = mine_isa_lexical(&g);
        assert_eq!(rel.len(), 1);
        assert_eq!((rel[0].src.as_str(), rel[0].dst.as_str()), (g.label(a), g.label(d)));
        assert!((rel[0].score - 0.81).abs() < 1e-12);
    }

    #[test]
    fn identical_encodings_give_candidates_without_self_pairs() {
        let mut g = ConceptGraph::new();
        intent(&mut g, "buy", "mobile-phone");
        intent(&mut g, "buy", "mobile phone");
        let rel = mine_isa_embedding(&g, &TextEncoder::default(), 3, 0.5);
        assert_eq!(rel.len(), 2);
        assert!(rel.iter().all(|r| r.src != r.dst && (r.score - 1.0).abs() < 1e-12));
    }

    #[test]
    fn dissimilar_products_give_nothing() {
        let mut g = ConceptGraph::new();
        intent(&mut g, "buy", "aaaa");
        intent(&mut g, "buy", "zzzz");
        assert!(mine_isa_embedding(&g, &TextEncoder::default(), 5, 0.5).is_empty());
    }

    #[test]
    fn k_beyond_product_count_truncates() {
        let g = example_graph();
        let n = g.ids_of_kind(NodeKind::Product).len();
        let neigh = product_neighbors(&g, &TextEncoder::default(), 100, -1.0);
        assert!(neigh.values().all(|v| v.len() == n - 1));
    }
}

use std::collections::BTreeSet;

use intentkg_core::graph::*;
use proptest::prelude::*;

const KINDS: [NodeKind; 4] = [NodeKind::Intent, NodeKind::Function, NodeKind::Product, NodeKind::Sememe];

fn nodes(g: &mut ConceptGraph, kinds: &[usize]) -> Vec<NodeId> {
    kinds
        .iter()
        .enumerate()
        .map(|(i, &k)| g.add_node(KINDS[k], &format!("n{i}"), Vec::<String>::new()).unwrap())
        .collect()
}

/// Transitive closure of the given directed edges by Floyd-Warshall.
fn closure(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut r = vec![vec![false; n]; n];
    for &(a, b) in edges {
        r[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if r[i][k] && r[k][j] {
                    r[i][j] = true;
                }
            }
        }
    }
    r
}

type RawEdge = (usize, usize, usize, f64);

fn raw_edges(n: usize) -> impl Strategy<Value = Vec<RawEdge>> {
    prop::collection::vec((0..n, 0usize..4, 0..n, -0.5f64..1.5), 0..40)
}

/// Every simple consequent path of 1..=depth edges from `start`, by brute force.
fn all_paths(adj: &[Vec<(usize, f64)>], start: usize, depth: usize) -> BTreeSet<(Vec<usize>, u64)> {
    let mut out = BTreeSet::new();
    let mut stack = vec![(vec![start], 1.0f64)];
    while let Some((path, c)) = stack.pop() {
        if path.len() > 1 {
            out.insert((path.clone(), c.to_bits()));
        }
        if path.len() > depth {
            continue;
        }
        for &(d, w) in &adj[*path.last().unwrap()] {
            if !path.contains(&d) {
                let mut p = path.clone();
                p.push(d);
                stack.push((p, c * w));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn checked_inserts_never_produce_findings(kinds in prop::collection::vec(0usize..4, 1..10), raw in raw_edges(10)) {
        let mut g = ConceptGraph::new();
        let ids = nodes(&mut g, &kinds);
        let n = ids.len();
        let mut isa: Vec<(usize, usize)> = Vec::new();
        for (s, k, d, conf) in raw {
            let (s, d) = (s % n, d % n);
            let kind = EdgeKind::ALL[k];
            let before = closure(n, &isa);
            let res = g.add_edge(ids[s], kind, ids[d], conf, Provenance::Generated);
            let schema_ok = kind.admits(KINDS[kinds[s]], KINDS[kinds[d]]);
            let conf_ok = (0.0..=1.0).contains(&conf);
            let cycles = kind == EdgeKind::IsA && (s == d || before[d][s]);
            let self_loop = kind == EdgeKind::Consequent && s == d;
            prop_assert_eq!(res.is_ok(), schema_ok && conf_ok && !cycles && !self_loop, "{:?}", res);
            if res.is_ok() && kind == EdgeKind::IsA {
                isa.push((s, d));
            }
        }
        prop_assert!(g.validate().is_clean(), "{:?}", g.validate().findings);
    }

    #[test]
    fn validator_counts_match_brute_force(kinds in prop::collection::vec(0usize..4, 1..8), raw in raw_edges(10)) {
        let mut g = ConceptGraph::new();
        let ids = nodes(&mut g, &kinds);
        let n = ids.len();
        let (mut schema, mut conf_bad, mut loops, mut dangling) = (0, 0, 0, 0);
        let mut isa = Vec::new();
        for (s, k, d, confidence) in raw {
            let kind = EdgeKind::ALL[k];
            // indices past the node list are dangling references
            let id = |i: usize| if i < n { ids[i] } else { NodeId(10_000 + i as u64) };
            g.add_edge_unchecked(Edge { src: id(s), kind, dst: id(d), confidence, provenance: Provenance::Generated });
            if kind == EdgeKind::IsA {
                isa.push((s, d));
            }
            if s >= n || d >= n {
                dangling += 1;
                continue;
            }
            schema += usize::from(!kind.admits(KINDS[kinds[s]], KINDS[kinds[d]]));
            loops += usize::from(kind == EdgeKind::Consequent && s == d);
            conf_bad += usize::from(!(0.0..=1.0).contains(&confidence));
        }
        let r = validate_graph(&g);
        prop_assert_eq!(r.count(FindingCode::DanglingEdge), dangling);
        prop_assert_eq!(r.count(FindingCode::SchemaViolation), schema);
        prop_assert_eq!(r.count(FindingCode::SelfLoop), loops);
        prop_assert_eq!(r.count(FindingCode::ConfidenceRange), conf_bad);
        // dangling ids take part in cycles like any other node
        let reach = closure(10, &isa);
        let cyclic = (0..10).any(|i| reach[i][i]);
        prop_assert_eq!(r.count(FindingCode::IsaCycle) > 0, cyclic);
    }

    #[test]
    fn chains_match_exhaustive_enumeration(raw in prop::collection::vec((0usize..7, 0usize..7, 0.05f64..1.0), 0..20), depth in 1usize..5) {
        let mut g = ConceptGraph::new();
        let ids = nodes(&mut g, &[0; 7]);
        let mut adj = vec![Vec::new(); 7];
        for (s, d, c) in raw {
            if g.add_edge(ids[s], EdgeKind::Consequent, ids[d], c, Provenance::Bayesian).is_ok()
                && !adj[s].iter().any(|&(x, _)| x == d)
            {
                adj[s].push((d, c));
            }
        }
        for start in 0..7 {
            let got: BTreeSet<(Vec<usize>, u64)> = g
                .consequent_chains(ids[start], depth)
                .unwrap()
                .into_iter()
                .map(|c| (c.path.iter().map(|p| ids.iter().position(|i| i == p).unwrap()).collect(), c.confidence.to_bits()))
                .collect();
            prop_assert_eq!(got, all_paths(&adj, start, depth));
        }
    }

    #[test]
    fn save_load_round_trips(kinds in prop::collection::vec(0usize..4, 1..10), raw in raw_edges(10)) {
        let mut g = ConceptGraph::new();
        let ids = nodes(&mut g, &kinds);
        for (s, k, d, c) in raw {
            let _ = g.add_edge(ids[s % ids.len()], EdgeKind::ALL[k], ids[d % ids.len()], c, Provenance::Lexical);
        }
        let mut buf = Vec::new();
        save_graph(&g, &mut buf).unwrap();
        let back = load_graph(buf.as_slice()).unwrap();
        prop_assert!(back.structurally_equal(&g));
        prop_assert_eq!(back.fingerprint(), g.fingerprint());
    }
}

#[test]
fn example_round_trips_through_a_file() {
    let g = example_graph();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kg.jsonl");
    save_graph(&g, std::fs::File::create(&path).unwrap()).unwrap();
    let back = load_graph(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert!(back.structurally_equal(&g));
    assert!(validate_graph(&back).is_clean());
}

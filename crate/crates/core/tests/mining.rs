use std::collections::{BTreeMap, BTreeSet};

use intentkg_core::graph::*;
use intentkg_core::mining::*;
use intentkg_core::repr::{TextEncoder, TextEncoderConfig};
use intentkg_core::util::cosine;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BASES: [&str; 10] = [
    "order coffee delivery",
    "book a hotel room",
    "rent a mobile phone",
    "buy movie tickets",
    "recharge phone credit",
    "renovate the kitchen",
    "take an internet taxi",
    "pay electricity bill",
    "apply for travel insurance",
    "reserve restaurant table",
];

/// Four distinct single-edit typos of `base`: swap, drop, double, substitute.
fn typos(base: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
    let chars: Vec<char> = base.chars().collect();
    let letter = |rng: &mut ChaCha8Rng| loop {
        let i = rng.gen_range(1..chars.len() - 1);
        if chars[i].is_alphabetic() && chars[i + 1].is_alphabetic() {
            return i;
        }
    };
    let mut out = BTreeSet::new();
    while out.len() < 4 {
        let mut c = chars.clone();
        let i = letter(rng);
        match out.len() {
            0 => c.swap(i, i + 1),
            1 => {
                c.remove(i);
            }
            2 => c.insert(i, c[i]),
            _ => c[i] = (b'a' + rng.gen_range(0..26)) as char,
        }
        let s: String = c.into_iter().collect();
        if s != base {
            out.insert(s);
        }
    }
    out.into_iter().collect()
}

#[test]
fn typo_groups_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut labels = Vec::new();
    let mut truth: Vec<BTreeSet<String>> = Vec::new();
    for base in BASES {
        let mut group: Vec<String> = typos(base, &mut rng);
        group.push(base.to_string());
        truth.push(group.iter().map(|l| canonicalize(l)).collect());
        labels.extend(group);
    }
    assert_eq!(labels.len(), 50);
    labels.shuffle(&mut rng);
    let clusters = align_nodes(&labels, &TextEncoder::default(), 0.7);
    let found: Vec<BTreeSet<String>> = clusters.iter().map(|c| c.members.iter().cloned().collect()).collect();
    let exact = truth.iter().filter(|g| found.contains(g)).count();
    assert!(exact >= 9, "{exact} of 10 groups exact: {clusters:#?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alignment_partitions_its_input(labels in prop::collection::vec("[a-e ]{1,8}[a-e]", 1..30), tau in 0.05f64..1.0) {
        let clusters = align_nodes(&labels, &TextEncoder::default(), tau);
        let mut seen = BTreeSet::new();
        let mut support = 0;
        for c in &clusters {
            prop_assert!(c.members.contains(&c.canonical));
            for m in &c.members {
                prop_assert!(seen.insert(m.clone()), "{} twice", m);
            }
            support += c.support;
        }
        let expected: BTreeSet<String> = labels.iter().map(|l| canonicalize(l)).collect();
        prop_assert_eq!(seen, expected);
        prop_assert_eq!(support, labels.len());
    }

    #[test]
    fn sessions_partition_events(raw in prop::collection::vec((0usize..5, 0u64..20_000), 0..300), gap in 1u64..3000, max_len in 1usize..12) {
        let events: Vec<UserEvent> = raw
            .iter()
            .map(|&(u, ts)| UserEvent { user: format!("u{u}"), ts, loc: "c".into(), intent: Some(format!("i{}", ts % 7)), item: None })
            .collect();
        let sessions = segment_sessions(&events, gap, max_len);
        let mut back: Vec<(String, u64)> = Vec::new();
        for s in &sessions {
            prop_assert!(!s.events.is_empty() && s.events.len() <= max_len);
            for w in s.events.windows(2) {
                prop_assert!(w[0].ts <= w[1].ts && w[1].ts - w[0].ts <= gap);
                prop_assert_eq!(&w[0].user, &w[1].user);
            }
            back.extend(s.events.iter().map(|e| (e.user.clone(), e.ts)));
        }
        let mut input: Vec<(String, u64)> = events.iter().map(|e| (e.user.clone(), e.ts)).collect();
        input.sort();
        back.sort();
        prop_assert_eq!(back, input);
        let keys: Vec<(String, u64)> = sessions.iter().map(|s| (s.user.clone(), s.start())).collect();
        prop_assert!(keys.windows(2).all(|w| w[0] <= w[1]));
    }
}

/// Random graph: `np` products with a random IsA DAG among them and intents
/// built from one of `nf` functions and one product each.
fn random_graph(seed: u64, np: usize, nf: usize, ni: usize) -> ConceptGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = ConceptGraph::new();
    let none = Vec::<String>::new;
    let products: Vec<NodeId> = (0..np)
        .map(|i| g.add_node(NodeKind::Product, &format!("product {i}"), none()).unwrap())
        .collect();
    let functions: Vec<NodeId> = (0..nf)
        .map(|i| g.add_node(NodeKind::Function, &format!("function {i}"), none()).unwrap())
        .collect();
    // edges only from lower to higher index keep it acyclic
    for a in 0..np {
        for b in a + 1..np {
            if rng.gen_bool(0.12) {
                g.add_edge(products[a], EdgeKind::IsA, products[b], 1.0, Provenance::Manual).unwrap();
            }
        }
    }
    let mut pairs = BTreeSet::new();
    while pairs.len() < ni {
        pairs.insert((rng.gen_range(0..nf), rng.gen_range(0..np)));
    }
    for (f, p) in pairs {
        let i = g.add_node(NodeKind::Intent, &format!("f{f} p{p}"), none()).unwrap();
        g.add_edge(i, EdgeKind::Consist, functions[f], 1.0, Provenance::Manual).unwrap();
        g.add_edge(i, EdgeKind::Consist, products[p], 1.0, Provenance::Manual).unwrap();
    }
    g
}

/// All-pairs shortest IsA path lengths between products, by relaxation.
fn product_distances(g: &ConceptGraph) -> BTreeMap<(NodeId, NodeId), usize> {
    let ps = g.ids_of_kind(NodeKind::Product);
    let mut d: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
    for e in g.edges().iter().filter(|e| e.kind == EdgeKind::IsA) {
        d.insert((e.src, e.dst), 1);
    }
    for &k in &ps {
        for &i in &ps {
            for &j in &ps {
                if let (Some(&a), Some(&b)) = (d.get(&(i, k)), d.get(&(k, j))) {
                    let e = d.entry((i, j)).or_insert(usize::MAX);
                    *e = (*e).min(a + b);
                }
            }
        }
    }
    d
}

#[test]
fn lexical_isa_equals_closure_oracle() {
    for seed in 0..40 {
        let np = 2 + (seed as usize % 19);
        let g = random_graph(seed, np, 3, np.min(12) + 2);
        let dist = product_distances(&g);
        let parts: Vec<(NodeId, NodeId, NodeId)> = g
            .ids_of_kind(NodeKind::Intent)
            .into_iter()
            .map(|i| (i, g.constituents(i, NodeKind::Function)[0], g.constituents(i, NodeKind::Product)[0]))
            .collect();
        let mut expected = BTreeSet::new();
        for &(i1, f1, p1) in &parts {
            for &(i2, f2, p2) in &parts {
                if i1 != i2 && f1 == f2 {
                    if let Some(&d) = dist.get(&(p1, p2)) {
                        expected.insert((g.label(i1).to_string(), g.label(i2).to_string(), 0.9f64.powi(d as i32 - 1).to_bits()));
                    }
                }
            }
        }
        let got: BTreeSet<_> = mine_isa_lexical(&g)
            .into_iter()
            .map(|r| (r.src, r.dst, r.score.to_bits()))
            .collect();
        assert_eq!(got, expected, "seed {seed}, {np} products");
    }
}

#[test]
fn embedding_isa_equals_exhaustive_top_k() {
    let encoder = TextEncoder::new(TextEncoderConfig { dim: 128, ..TextEncoderConfig::default() });
    let words = ["phone", "phones", "mobile", "tablet", "ticket", "tickets", "house", "housing", "coffee", "cafe"];
    let mut g = ConceptGraph::new();
    let none = Vec::<String>::new;
    let buy = g.add_node(NodeKind::Function, "buy", none()).unwrap();
    let rent = g.add_node(NodeKind::Function, "rent", none()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut products = Vec::new();
    while products.len() < 30 {
        let label = format!("{} {}", words[rng.gen_range(0..10)], words[rng.gen_range(0..10)]);
        if g.find(NodeKind::Product, &label).is_none() {
            products.push(g.add_node(NodeKind::Product, &label, none()).unwrap());
        }
    }
    for (k, &p) in products.iter().enumerate() {
        for f in [buy, rent] {
            if k % 3 == 0 && f == rent {
                continue;
            }
            let i = g
                .add_node(NodeKind::Intent, &format!("{} {}", g.label(f), g.label(p)), none())
                .unwrap();
            g.add_edge(i, EdgeKind::Consist, f, 1.0, Provenance::Manual).unwrap();
            g.add_edge(i, EdgeKind::Consist, p, 1.0, Provenance::Manual).unwrap();
        }
    }
    let (k, tau) = (5, 0.3);
    let vec_of = |p: NodeId| encoder.encode(g.label(p));
    // exhaustive cosine top-K per product, ties by id
    let mut best: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    for &p in &products {
        let mut sims: Vec<(NodeId, f64)> = products
            .iter()
            .filter(|&&q| q != p)
            .map(|&q| (q, cosine(&vec_of(p), &vec_of(q))))
            .collect();
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(q, sim) in sims.iter().take(k).filter(|s| s.1 >= tau) {
            for ia in g.in_edges(p, EdgeKind::Consist).map(|e| e.src) {
                for ib in g.in_edges(q, EdgeKind::Consist).map(|e| e.src) {
                    let shared = g.constituents(ia, NodeKind::Function) == g.constituents(ib, NodeKind::Function);
                    if ia == ib || !shared {
                        continue;
                    }
                    for key in [(ia, ib), (ib, ia)] {
                        let e = best.entry(key).or_insert(sim);
                        *e = e.max(sim);
                    }
                }
            }
        }
    }
    let expected: BTreeSet<(String, String, u64)> = best
        .into_iter()
        .map(|((a, b), s)| (g.label(a).to_string(), g.label(b).to_string(), s.to_bits()))
        .collect();
    let got: BTreeSet<_> = mine_isa_embedding(&g, &encoder, k, tau)
        .into_iter()
        .map(|r| (r.src, r.dst, r.score.to_bits()))
        .collect();
    assert!(!expected.is_empty());
    assert_eq!(got, expected);
}

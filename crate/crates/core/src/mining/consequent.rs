use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MiningError, ScoredRelation, Session};
use crate::graph::EdgeKind;
use crate::util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsequentConfig {
    pub max_parents: usize,
    pub min_support: usize,
    pub min_lift: f64,
    /// Required excess over 1/2 of the "a first" fraction among co-occurrences.
    pub margin: f64,
    /// Random restarts in addition to the search from the empty network.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ConsequentConfig {
    fn default() -> Self {
        ConsequentConfig {
            max_parents: 3,
            min_support: 30,
            min_lift: 1.5,
            margin: 0.1,
            restarts: 4,
            seed: 0,
        }
    }
}

/// Binary per-session occurrence data plus first/last positions.
#[derive(Debug, Clone)]
pub struct Occurrences {
    pub vocab: Vec<String>,
    sessions: usize,
    words: usize,
    columns: Vec<Vec<u64>>,
    /// Per session: intent index -> (first position, last position).
    positions: Vec<BTreeMap<usize, (usize, usize)>>,
}

impl Occurrences {
    pub fn new(sessions: &[Session]) -> Result<Self, MiningError> {
        let mut vocab = BTreeSet::new();
        for s in sessions {
            for e in &s.events {
                match &e.intent {
                    Some(i) => {
                        vocab.insert(i.clone());
                    }
                    None => {
                        return Err(MiningError::Unlabeled {
                            user: e.user.clone(),
                            ts: e.ts,
                        })
                    }
                }
            }
        }
        let vocab: Vec<String> = vocab.into_iter().collect();
        let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
        let words = sessions.len().div_ceil(64);
        let mut columns = vec![vec![0u64; words]; vocab.len()];
        let mut positions = Vec::with_capacity(sessions.len());
        for (s, sess) in sessions.iter().enumerate() {
            let mut pos: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
            for (k, e) in sess.events.iter().enumerate() {
                let v = index[e.intent.as_deref().expect("checked above")];
                columns[v][s / 64] |= 1 << (s % 64);
                pos.entry(v).and_modify(|p| p.1 = k).or_insert((k, k));
            }
            positions.push(pos);
        }
        Ok(Occurrences {
            vocab,
            sessions: sessions.len(),
            words,
            columns,
            positions,
        })
    }

    pub fn sessions(&self) -> usize {
        self.sessions
    }

    pub fn count(&self, v: usize) -> usize {
        self.columns[v].iter().map(|w| w.count_ones() as usize).sum()
    }

    fn tail_mask(&self, w: usize) -> u64 {
        let rem = self.sessions % 64;
        if w + 1 == self.words && rem != 0 {
            (1u64 << rem) - 1
        } else {
            u64::MAX
        }
    }

    /// Counts `(n(config), n(config, child = 1))` for every assignment of the
    /// parents, with parent `j` as bit `j` of the config index.
    pub fn counts(&self, child: usize, parents: &[usize]) -> Vec<(usize, usize)> {
        let k = parents.len();
        let mut out = vec![(0usize, 0usize); 1 << k];
        for (cfg, slot) in out.iter_mut().enumerate() {
            for w in 0..self.words {
                let mut m = self.tail_mask(w);
                for (bit, &p) in parents.iter().enumerate() {
                    let col = self.columns[p][w];
                    m &= if cfg >> bit & 1 == 1 { col } else { !col };
                }
                slot.0 += m.count_ones() as usize;
                slot.1 += (m & self.columns[child][w]).count_ones() as usize;
            }
        }
        out
    }

    /// BIC local score: log-likelihood minus `ln(N)/2` per free parameter
    /// (one per parent configuration for a binary child).
    pub fn bic(&self, child: usize, parents: &[usize]) -> f64 {
        let n = self.sessions as f64;
        let ll: f64 = self
            .counts(child, parents)
            .into_iter()
            .map(|(total, ones)| {
                let zeros = total - ones;
                let t = total as f64;
                let term = |c: usize| if c == 0 { 0.0 } else { c as f64 * (c as f64 / t).ln() };
                term(ones) + term(zeros)
            })
            .sum();
        ll - 0.5 * n.ln() * (1usize << parents.len()) as f64
    }

    /// Directional statistics for the ordered pair (a, b).
    pub fn pair_stats(&self, a: usize, b: usize) -> PairStats {
        let mut s = PairStats {
            count_a: self.count(a),
            count_b: self.count(b),
            sessions: self.sessions,
            ..PairStats::default()
        };
        for pos in &self.positions {
            if let (Some(pa), Some(pb)) = (pos.get(&a), pos.get(&b)) {
                s.cooc += 1;
                if pa.0 < pb.0 {
                    s.before += 1;
                }
                if pa.0 < pb.1 {
                    s.follows += 1;
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairStats {
    pub sessions: usize,
    pub count_a: usize,
    pub count_b: usize,
    /// Sessions containing both.
    pub cooc: usize,
    /// Sessions where the first `a` precedes the first `b`.
    pub before: usize,
    /// Sessions where some `b` comes after the first `a`.
    pub follows: usize,
}

impl PairStats {
    pub fn p_follow(&self) -> f64 {
        self.follows as f64 / self.count_a as f64
    }

    /// `P(b follows a) / P(b)`.
    pub fn lift(&self) -> f64 {
        if self.count_a == 0 || self.count_b == 0 {
            return 0.0;
        }
        self.p_follow() / (self.count_b as f64 / self.sessions as f64)
    }

    pub fn before_fraction(&self) -> f64 {
        if self.cooc == 0 {
            0.0
        } else {
            self.before as f64 / self.cooc as f64
        }
    }
}

/// A learned DAG over the intent vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub parents: Vec<Vec<usize>>,
    pub score: f64,
}

impl Network {
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (p, c)))
            .collect();
        out.sort();
        out
    }

    pub fn is_acyclic(&self) -> bool {
        let n = self.parents.len();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut stack: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = stack.pop() {
            seen += 1;
            for (c, ps) in self.parents.iter().enumerate() {
                if ps.contains(&v) {
                    indeg[c] -= 1;
                    if indeg[c] == 0 {
                        stack.push(c);
                    }
                }
            }
        }
        seen == n
    }
}

struct Search<'a> {
    data: &'a Occurrences,
    max_parents: usize,
    cache: HashMap<(usize, Vec<usize>), f64>,
}

impl Search<'_> {
    fn local(&mut self, child: usize, parents: &[usize]) -> f64 {
        let mut key = parents.to_vec();
        key.sort_unstable();
        if let Some(&s) = self.cache.get(&(child, key.clone())) {
            return s;
        }
        let s = self.data.bic(child, &key);
        self.cache.insert((child, key), s);
        s
    }

    /// Whether `to` is reachable from `from` following parent -> child edges.
    fn reaches(parents: &[Vec<usize>], from: usize, to: usize) -> bool {
        let mut stack = vec![from];
        let mut seen = vec![false; parents.len()];
        while let Some(v) = stack.pop() {
            if v == to {
                return true;
            }
            if std::mem::replace(&mut seen[v], true) {
                continue;
            }
            for (c, ps) in parents.iter().enumerate() {
                if ps.contains(&v) && !seen[c] {
                    stack.push(c);
                }
            }
        }
        false
    }

    /// Greedy best-improvement hill climbing over add/remove/reverse moves.
    fn climb(&mut self, mut parents: Vec<Vec<usize>>) -> Network {
        let n = parents.len();
        let mut local: Vec<f64> = (0..n).map(|c| self.local(c, &parents[c])).collect();
        loop {
            // (delta, new parent sets for up to two children)
            let mut best: Option<(f64, Vec<(usize, Vec<usize>)>)> = None;
            let consider = |delta: f64, change: Vec<(usize, Vec<usize>)>, best: &mut Option<_>| {
                if delta > 1e-9 && best.as_ref().is_none_or(|(d, _): &(f64, _)| delta > *d) {
                    *best = Some((delta, change));
                }
            };
            for u in 0..n {
                for v in 0..n {
                    if u == v {
                        continue;
                    }
                    if parents[v].contains(&u) {
                        // remove u -> v
                        let pv: Vec<usize> = parents[v].iter().copied().filter(|&p| p != u).collect();
                        let d = self.local(v, &pv) - local[v];
                        consider(d, vec![(v, pv.clone())], &mut best);
                        // reverse to v -> u
                        if parents[u].len() < self.max_parents {
                            let mut tmp = parents.clone();
                            tmp[v] = pv.clone();
                            if !Self::reaches(&tmp, u, v) {
                                let mut pu = parents[u].clone();
                                pu.push(v);
                                pu.sort_unstable();
                                let d2 = d + self.local(u, &pu) - local[u];
                                consider(d2, vec![(v, pv), (u, pu)], &mut best);
                            }
                        }
                    } else if !parents[u].contains(&v)
                        && parents[v].len() < self.max_parents
                        && !Self::reaches(&parents, v, u)
                    {
                        let mut pv = parents[v].clone();
                        pv.push(u);
                        pv.sort_unstable();
                        let d = self.local(v, &pv) - local[v];
                        consider(d, vec![(v, pv)], &mut best);
                    }
                }
            }
            match best {
                Some((_, change)) => {
                    for (c, ps) in change {
                        local[c] = self.local(c, &ps);
                        parents[c] = ps;
                    }
                }
                None => break,
            }
        }
        Network {
            score: local.iter().sum(),
            parents,
        }
    }
}

fn random_dag(n: usize, max_parents: usize, rng: &mut util::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let p = 2.0 / n.max(2) as f64;
    let mut parents = vec![Vec::new(); n];
    for j in 0..n {
        for i in 0..j {
            if parents[order[j]].len() < max_parents && rng.gen_bool(p) {
                parents[order[j]].push(order[i]);
            }
        }
        parents[order[j]].sort_unstable();
    }
    parents
}

/// Structure search: hill climbing from the empty network and from
/// `restarts` random DAGs. The highest score wins; ties go to the smaller
/// edge list.
pub fn learn_structure(data: &Occurrences, config: &ConsequentConfig) -> Network {
    let n = data.vocab.len();
    let mut search = Search {
        data,
        max_parents: config.max_parents,
        cache: HashMap::new(),
    };
    let mut rng = util::rng(config.seed, 31);
    let mut best = search.climb(vec![Vec::new(); n]);
    for _ in 0..config.restarts {
        let start = random_dag(n, config.max_parents, &mut rng);
        let net = search.climb(start);
        let better = net.score > best.score + 1e-9
            || ((net.score - best.score).abs() <= 1e-9 && net.edges() < best.edges());
        if better {
            best = net;
        }
    }
    best
}

/// Consequent relations between intents: dependent pairs from the learned
/// network, oriented by which intent tends to come first in a session, and
/// kept when lift and support clear the thresholds. Score is the lift.
pub fn mine_consequent(sessions: &[Session], config: &ConsequentConfig) -> Result<Vec<ScoredRelation>, MiningError> {
    if sessions.is_empty() {
        return Err(MiningError::NoSessions);
    }
    let data = Occurrences::new(sessions)?;
    if data.vocab.len() < 2 {
        return Ok(Vec::new());
    }
    let net = learn_structure(&data, config);
    let pairs: BTreeSet<(usize, usize)> = net.edges().into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
    let mut out = Vec::new();
    for (x, y) in pairs {
        for (a, b) in [(x, y), (y, x)] {
            let s = data.pair_stats(a, b);
            let lift = s.lift();
            if s.before_fraction() >= 0.5 + config.margin && lift >= config.min_lift && s.follows >= config.min_support {
                out.push(ScoredRelation {
                    src: data.vocab[a].clone(),
                    kind: EdgeKind::Consequent,
                    dst: data.vocab[b].clone(),
                    score: lift,
                    evidence: BTreeMap::from([
                        ("lift".into(), lift),
                        ("p_follow".into(), s.p_follow()),
                        ("before_fraction".into(), s.before_fraction()),
                        ("cooc".into(), s.cooc as f64),
                        ("follows".into(), s.follows as f64),
                        ("count_src".into(), s.count_a as f64),
                        ("count_dst".into(), s.count_b as f64),
                        ("sessions".into(), s.sessions as f64),
                    ]),
                });
            }
        }
    }
    out.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::UserEvent;

    fn session(i: usize, intents: &[&str]) -> Session {
        Session {
            user: format!("u{i}"),
            index: 0,
            events: intents
                .iter()
                .enumerate()
                .map(|(k, name)| UserEvent {
                    user: format!("u{i}"),
                    ts: k as u64 * 60,
                    loc: "c0".into(),
                    intent: Some(name.to_string()),
                    item: None,
                })
                .collect(),
        }
    }

    /// Sessions over a, b and fillers where P(b | a earlier) = 0.9 and the
    /// marginal P(b) is 0.1.
    fn planted(n: usize, seed: u64) -> Vec<Session> {
        let mut rng = util::rng(seed, 1);
        let p_a = 0.05;
        let p_b_alone = (0.1 - p_a * 0.9) / (1.0 - p_a);
        let fillers = ["f1", "f2", "f3", "f4"];
        (0..n)
            .map(|i| {
                let mut ev: Vec<&str> = Vec::new();
                for f in fillers {
                    if rng.gen_bool(0.3) {
                        ev.push(f);
                    }
                }
                if rng.gen_bool(p_a) {
                    let at = rng.gen_range(0..=ev.len());
                    ev.insert(at, "a");
                    if rng.gen_bool(0.9) {
                        let after = rng.gen_range(at + 1..=ev.len());
                        ev.insert(after, "b");
                    }
                } else if rng.gen_bool(p_b_alone) {
                    let at = rng.gen_range(0..=ev.len());
                    ev.insert(at, "b");
                }
                if ev.is_empty() {
                    ev.push("f1");
                }
                session(i, &ev)
            })
            .collect()
    }

    #[test]
    fn planted_edge_recovered_with_lift_near_nine() {
        let sessions = planted(10_000, 3);
        let rel = mine_consequent(&sessions, &ConsequentConfig::default()).unwrap();
        assert_eq!(rel.len(), 1, "{rel:?}");
        assert_eq!((rel[0].src.as_str(), rel[0].dst.as_str()), ("a", "b"));
        assert!((rel[0].score - 9.0).abs() < 0.5, "lift {}", rel[0].score);
    }

    #[test]
    fn shuffled_sessions_give_no_edges() {
        let mut rng = util::rng(4, 0);
        let mut sessions = planted(10_000, 3);
        for s in &mut sessions {
            s.events.shuffle(&mut rng);
        }
        assert!(mine_consequent(&sessions, &ConsequentConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn independent_intents_give_no_edges() {
        let mut rng = util::rng(5, 0);
        let sessions: Vec<Session> = (0..5000)
            .map(|i| {
                let ev: Vec<&str> = ["a", "b", "c", "d"].into_iter().filter(|_| rng.gen_bool(0.4)).collect();
                session(i, if ev.is_empty() { &["a"] } else { &ev })
            })
            .collect();
        assert!(mine_consequent(&sessions, &ConsequentConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn single_intent_vocabulary_is_empty() {
        let sessions = vec![session(0, &["a", "a"]), session(1, &["a"])];
        assert!(mine_consequent(&sessions, &ConsequentConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn unlabeled_events_rejected() {
        let mut s = session(0, &["a", "b"]);
        s.events[1].intent = None;
        assert!(matches!(
            mine_consequent(&[s], &ConsequentConfig::default()),
            Err(MiningError::Unlabeled { .. })
        ));
    }

    #[test]
    fn bic_matches_direct_count() {
        let sessions = planted(777, 9);
        let data = Occurrences::new(&sessions).unwrap();
        let a = data.vocab.iter().position(|v| v == "a").unwrap();
        let b = data.vocab.iter().position(|v| v == "b").unwrap();
        let f1 = data.vocab.iter().position(|v| v == "f1").unwrap();
        // direct tabulation over sessions
        let has = |s: &Session, name: &str| s.events.iter().any(|e| e.intent.as_deref() == Some(name));
        let mut table = [[0usize; 2]; 4];
        for s in &sessions {
            let cfg = has(s, "a") as usize | (has(s, "f1") as usize) << 1;
            table[cfg][has(s, "b") as usize] += 1;
        }
        let mut ll = 0.0;
        for row in table {
            let t = (row[0] + row[1]) as f64;
            for c in row {
                if c > 0 {
                    ll += c as f64 * (c as f64 / t).ln();
                }
            }
        }
        let expect = ll - 0.5 * (777f64).ln() * 4.0;
        assert!((data.bic(b, &[a, f1]) - expect).abs() < 1e-9);
    }

    #[test]
    fn learned_network_is_acyclic_and_deterministic() {
        let sessions = planted(3000, 11);
        let data = Occurrences::new(&sessions).unwrap();
        let cfg = ConsequentConfig {
            restarts: 3,
            ..Default::default()
        };
        let n1 = learn_structure(&data, &cfg);
        let n2 = learn_structure(&data, &cfg);
        assert!(n1.is_acyclic());
        assert!(n1.parents.iter().all(|p| p.len() <= cfg.max_parents));
        assert_eq!(n1, n2);
    }
}

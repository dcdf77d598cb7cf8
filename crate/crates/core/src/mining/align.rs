use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::canonicalize;
use crate::repr::TextEncoder;
use crate::util::cosine;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub canonical: String,
    /// Canonical member labels, sorted.
    pub members: Vec<String>,
    /// Total number of input occurrences covered by the cluster.
    pub support: usize,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Single-link clustering of labels whose encodings have cosine similarity
/// at least `tau`. Labels are canonicalized first, so pure whitespace or case
/// variants always collapse. A label's support is its number of occurrences
/// in `labels`. Clusters come back sorted by canonical label.
pub fn align_nodes(labels: &[String], encoder: &TextEncoder, tau: f64) -> Vec<Cluster> {
    assert!(tau > 0.0 && tau <= 1.0, "tau must lie in (0, 1]");
    let mut support: BTreeMap<String, usize> = BTreeMap::new();
    for l in labels {
        *support.entry(canonicalize(l)).or_default() += 1;
    }
    let uniq: Vec<(String, usize)> = support.into_iter().collect();
    let vecs: Vec<Vec<f64>> = uniq.iter().map(|(l, _)| encoder.encode(l)).collect();
    let mut uf = UnionFind((0..uniq.len()).collect());
    for i in 0..uniq.len() {
        for j in i + 1..uniq.len() {
            if cosine(&vecs[i], &vecs[j]) >= tau {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..uniq.len() {
        let r = uf.find(i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Cluster> = groups
        .into_values()
        .map(|idx| {
            // members are visited in lexicographic order, so the first max wins ties
            let best = idx.iter().copied().fold(idx[0], |b, i| if uniq[i].1 > uniq[b].1 { i } else { b });
            Cluster {
                canonical: uniq[best].0.clone(),
                members: idx.iter().map(|&i| uniq[i].0.clone()).collect(),
                support: idx.iter().map(|&i| uniq[i].1).sum(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.canonical.cmp(&b.canonical));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_variants_collapse() {
        let c = align_nodes(&["order coffee".into(), "order coffee ".into()], &TextEncoder::default(), 0.99);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].support, 2);
    }

    #[test]
    fn disjoint_labels_stay_apart() {
        // wide enough that the two n-gram sets do not collide
        let enc = TextEncoder::new(crate::repr::TextEncoderConfig {
            dim: 1024,
            ..Default::default()
        });
        let c = align_nodes(&["aaaa".into(), "zzzz".into()], &enc, 1e-12);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn canonical_is_most_supported_then_lexicographic() {
        let enc = TextEncoder::default();
        let labels: Vec<String> = ["order coffe", "order coffee", "order coffee", "order cofee"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let c = align_nodes(&labels, &enc, 0.6);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].canonical, "order coffee");
        let tie = align_nodes(&["order coffee".into(), "order coffe".into()], &enc, 0.6);
        assert_eq!(tie[0].canonical, "order coffe");
    }
}

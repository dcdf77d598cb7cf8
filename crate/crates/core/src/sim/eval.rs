use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::bayes::BayesOracle;
use super::logs::{user_ranges, SESSION_GAP};
use super::world::SyntheticWorld;
use super::SimError;
use crate::graph::ConceptGraph;
use crate::mining::UserEvent;
use crate::predictor::{apply_rules, recent_intents, PredictorConfig, PredictorModel, PredictorVocab, RuleConfig};
use crate::repr::{label_item, score_item_intent, IntentEmbeddingTable, Item, TrainedMatcher};

/// A prefix of one user's history and the event that followed it.
pub type HeldOutPoint = (Vec<UserEvent>, UserEvent);

#[derive(Debug, Clone, PartialEq)]
pub struct HeldOut {
    /// Every event except the held-out ones, in log order.
    pub train: Vec<UserEvent>,
    pub points: Vec<HeldOutPoint>,
}

/// Temporal split: the last event of every user with at least two events is
/// held out; everything before it is training data and its context. Events
/// must be sorted by (user, ts), as generated logs are.
pub fn hold_out_last(events: &[UserEvent]) -> HeldOut {
    let mut train = Vec::with_capacity(events.len());
    let mut points = Vec::new();
    for r in user_ranges(events) {
        let ev = &events[r];
        if ev.len() < 2 {
            train.extend_from_slice(ev);
            continue;
        }
        let (ctx, last) = ev.split_at(ev.len() - 1);
        train.extend_from_slice(ctx);
        points.push((ctx.to_vec(), last[0].clone()));
    }
    HeldOut { train, points }
}

fn truth_index(labels: &[String], e: &UserEvent) -> Result<usize, SimError> {
    let label = e.intent.as_deref().unwrap_or_default();
    let canonical = crate::graph::canonicalize(label);
    labels
        .iter()
        .position(|l| *l == canonical)
        .ok_or_else(|| SimError::UnknownIntent(label.to_string()))
}

/// Share of points whose true index is among the `k` most probable entries
/// (ties by index).
pub fn recall_at(dists: &[Vec<f64>], truth: &[usize], k: usize) -> f64 {
    if dists.is_empty() {
        return 0.0;
    }
    let hits = dists
        .iter()
        .zip(truth)
        .filter(|(d, &t)| {
            let better = d
                .iter()
                .enumerate()
                .filter(|&(i, p)| *p > d[t] || (*p == d[t] && i < t))
                .count();
            better < k
        })
        .count();
    hits as f64 / dists.len() as f64
}

/// Produces a next-intent distribution (indexed like `labels`) for every
/// held-out point, or `None` for a forecaster that carries no intent signal.
pub trait Forecaster {
    fn forecast(&self, labels: &[String], points: &[HeldOutPoint]) -> Result<Vec<Option<Vec<f64>>>, SimError>;
}

/// The trained predictor, optionally followed by rule post-processing.
pub struct ModelForecaster<'a> {
    pub model: &'a PredictorModel,
    pub graph: Option<&'a ConceptGraph>,
    pub rules: RuleConfig,
}

impl ModelForecaster<'_> {
    fn distributions(&self, labels: &[String], points: &[HeldOutPoint]) -> Result<Vec<Vec<f64>>, SimError> {
        if self.model.vocab.intents != labels {
            return Err(SimError::Component("predictor vocabulary does not match the world labels".into()));
        }
        let queries: Vec<(&[UserEvent], u64, &str)> =
            points.iter().map(|(c, t)| (c.as_slice(), t.ts, t.loc.as_str())).collect();
        let mut dists = self
            .model
            .predict_next_many(&queries)
            .map_err(|e| SimError::Component(e.to_string()))?;
        if let Some(graph) = self.graph {
            for (d, (c, t)) in dists.iter_mut().zip(points) {
                let recent = recent_intents(c, t.ts, &self.rules);
                *d = apply_rules(d, labels, &recent, graph, &self.rules).0;
            }
        }
        Ok(dists)
    }
}

impl Forecaster for ModelForecaster<'_> {
    fn forecast(&self, labels: &[String], points: &[HeldOutPoint]) -> Result<Vec<Option<Vec<f64>>>, SimError> {
        Ok(self.distributions(labels, points)?.into_iter().map(Some).collect())
    }
}

/// Knows the true next intent: a one-hot distribution on it.
pub struct OracleForecaster;

impl Forecaster for OracleForecaster {
    fn forecast(&self, labels: &[String], points: &[HeldOutPoint]) -> Result<Vec<Option<Vec<f64>>>, SimError> {
        points
            .iter()
            .map(|(_, t)| {
                let mut d = vec![0.0; labels.len()];
                d[truth_index(labels, t)?] = 1.0;
                Ok(Some(d))
            })
            .collect()
    }
}

/// The exact posterior of the planted process.
pub struct BayesForecaster<'w> {
    pub world: &'w SyntheticWorld,
}

impl Forecaster for BayesForecaster<'_> {
    fn forecast(&self, labels: &[String], points: &[HeldOutPoint]) -> Result<Vec<Option<Vec<f64>>>, SimError> {
        if self.world.labels() != labels {
            return Err(SimError::Component("labels are not in world order".into()));
        }
        let oracle = BayesOracle::new(self.world);
        points
            .iter()
            .map(|(c, t)| oracle.posterior(c, t.ts, &t.loc).map(Some))
            .collect()
    }
}

/// The random-predictor baseline: a seeded, untrained model with the same
/// architecture, whose outputs are close to uniform.
pub fn untrained_model(config: &PredictorConfig, vocab: PredictorVocab) -> Result<PredictorModel, SimError> {
    PredictorModel::init(config, vocab).map_err(|e| SimError::Component(e.to_string()))
}

/// No intent signal at all: recall and ranking fall back to popularity.
pub struct PopularityOnly;

impl Forecaster for PopularityOnly {
    fn forecast(&self, _labels: &[String], points: &[HeldOutPoint]) -> Result<Vec<Option<Vec<f64>>>, SimError> {
        Ok(vec![None; points.len()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub id: String,
    /// Training-log frequency divided by the largest one.
    pub popularity: f64,
    /// Raw matcher score per intent.
    pub scores: Vec<f64>,
    /// Scores normalized to sum to 1 over intents.
    pub share: Vec<f64>,
    /// Intents the matcher labels the item with (at least its best one).
    pub labels: Vec<usize>,
}

/// The item catalog as the recommender sees it: matcher scores against every
/// intent and popularity from training logs.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub labels: Vec<String>,
    pub entries: Vec<CatalogEntry>,
    /// Entry indices by descending popularity, ties by id.
    pub by_popularity: Vec<usize>,
}

impl Catalog {
    pub fn build(
        items: &[Item],
        labels: &[String],
        train: &[UserEvent],
        matcher: &TrainedMatcher,
        table: &IntentEmbeddingTable,
        threshold: f64,
    ) -> Result<Self, SimError> {
        if matcher.loss_history.len() < 2 {
            return Err(SimError::Untrained("matcher has no training epochs".into()));
        }
        let err = |e: crate::repr::ReprError| SimError::Component(e.to_string());
        let intents = labels
            .iter()
            .map(|l| {
                table
                    .vector(l)
                    .ok_or_else(|| SimError::Component(format!("intent {l:?} has no embedding")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in train {
            if let Some(i) = &e.item {
                *counts.entry(i).or_default() += 1;
            }
        }
        let max = counts.values().copied().max().unwrap_or(0).max(1) as f64;
        let mut entries = Vec::with_capacity(items.len());
        for item in items {
            let x = matcher.item_vector(item).map_err(err)?;
            let mut xn = x.clone();
            let n = xn.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                xn.iter_mut().for_each(|v| *v /= n);
            }
            let scores = intents
                .iter()
                .map(|v| score_item_intent(&xn, v, &matcher.params))
                .collect::<Result<Vec<_>, _>>()
                .map_err(err)?;
            let z: f64 = scores.iter().sum();
            let share = scores.iter().map(|s| s / z).collect();
            let labeled: BTreeSet<String> = label_item(&x, table, &matcher.params, usize::MAX, threshold)
                .map_err(err)?
                .into_iter()
                .map(|s| s.label)
                .collect();
            let best = (0..scores.len())
                .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
                .expect("at least one intent");
            let item_labels = (0..labels.len())
                .filter(|&k| k == best || labeled.contains(&labels[k]))
                .collect();
            entries.push(CatalogEntry {
                id: item.id.clone(),
                popularity: counts.get(item.id.as_str()).copied().unwrap_or(0) as f64 / max,
                scores,
                share,
                labels: item_labels,
            });
        }
        let mut by_popularity: Vec<usize> = (0..entries.len()).collect();
        by_popularity.sort_by(|&a, &b| {
            entries[b]
                .popularity
                .total_cmp(&entries[a].popularity)
                .then_with(|| entries[a].id.cmp(&entries[b].id))
        });
        Ok(Catalog {
            labels: labels.to_vec(),
            entries,
            by_popularity,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecsysConfig {
    /// Predicted intents whose items enter the recall pool.
    pub top_k_intents: usize,
    pub recall_pool_size: usize,
    /// Most popular items added to the pool.
    pub popularity_recall: usize,
    pub w_match: f64,
    pub w_popularity: f64,
    /// Length of the recommendation list scored by hit-rate.
    pub hit_n: usize,
}

impl Default for RecsysConfig {
    fn default() -> Self {
        RecsysConfig {
            top_k_intents: 5,
            recall_pool_size: 60,
            popularity_recall: 20,
            w_match: 1.0,
            w_popularity: 0.3,
            hit_n: 10,
        }
    }
}

/// How well an item matches a predicted intent distribution.
pub fn match_score(entry: &CatalogEntry, dist: &[f64]) -> f64 {
    entry.share.iter().zip(dist).map(|(s, p)| s * p).sum()
}

/// Recall then rank: intent-based recall for the top intents of `dist` in
/// rank order, then popularity recall, truncated to the pool size; ranked by
/// `w_match * match_score + w_popularity * popularity`, ties by id. Without a
/// distribution only popularity is used.
pub fn rank_items(catalog: &Catalog, dist: Option<&[f64]>, config: &RecsysConfig) -> Vec<usize> {
    let mut pool = Vec::new();
    let mut seen = vec![false; catalog.entries.len()];
    let mut push = |i: usize, pool: &mut Vec<usize>| {
        if !seen[i] {
            seen[i] = true;
            pool.push(i);
        }
    };
    if let Some(d) = dist {
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
        for &k in order.iter().take(config.top_k_intents) {
            let mut members: Vec<usize> = (0..catalog.entries.len())
                .filter(|&i| catalog.entries[i].labels.contains(&k))
                .collect();
            members.sort_by(|&a, &b| {
                let (ea, eb) = (&catalog.entries[a], &catalog.entries[b]);
                eb.scores[k].total_cmp(&ea.scores[k]).then_with(|| ea.id.cmp(&eb.id))
            });
            members.into_iter().for_each(|i| push(i, &mut pool));
        }
    }
    for &i in catalog.by_popularity.iter().take(config.popularity_recall) {
        push(i, &mut pool);
    }
    pool.truncate(config.recall_pool_size);
    let score = |i: usize| {
        let e = &catalog.entries[i];
        let m = dist.map_or(0.0, |d| match_score(e, d));
        config.w_match * m + config.w_popularity * e.popularity
    };
    let mut scored: Vec<(usize, f64)> = pool.into_iter().map(|i| (i, score(i))).collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| catalog.entries[a.0].id.cmp(&catalog.entries[b.0].id))
    });
    scored.into_iter().map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecsysResult {
    /// hit_at[n-1] = share of points whose true item is in the top n.
    pub hit_at: Vec<f64>,
    /// Next-intent recall of the forecaster; zero when it has no signal.
    pub recall_at_1: f64,
    pub recall_at_10: f64,
    pub points: usize,
}

impl RecsysResult {
    pub fn hit_rate(&self) -> f64 {
        self.hit_at.last().copied().unwrap_or(0.0)
    }
}

pub fn run_recsys(
    catalog: &Catalog,
    points: &[HeldOutPoint],
    forecaster: &dyn Forecaster,
    config: &RecsysConfig,
) -> Result<RecsysResult, SimError> {
    if config.hit_n == 0 {
        return Err(SimError::Config("hit_n must be positive".into()));
    }
    let dists = forecaster.forecast(&catalog.labels, points)?;
    let index: BTreeMap<&str, usize> = catalog
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.as_str(), i))
        .collect();
    let mut hits = vec![0usize; config.hit_n];
    let (mut known, mut truth) = (Vec::new(), Vec::new());
    for ((_, target), dist) in points.iter().zip(&dists) {
        let want = target.item.as_deref().and_then(|i| index.get(i)).copied();
        let ranked = rank_items(catalog, dist.as_deref(), config);
        if let Some(pos) = want.and_then(|w| ranked.iter().take(config.hit_n).position(|&i| i == w)) {
            hits[pos..].iter_mut().for_each(|h| *h += 1);
        }
        if let Some(d) = dist {
            known.push(d.clone());
            truth.push(truth_index(&catalog.labels, target)?);
        }
    }
    let n = points.len().max(1) as f64;
    Ok(RecsysResult {
        hit_at: hits.into_iter().map(|h| h as f64 / n).collect(),
        recall_at_1: recall_at(&known, &truth, 1),
        recall_at_10: recall_at(&known, &truth, 10),
        points: points.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelingMetrics {
    pub micro_f1: f64,
    pub map: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Micro-F1 at `threshold` and mean average precision of the full ranking,
/// against the given true label sets.
pub fn labeling_metrics(
    matcher: &TrainedMatcher,
    table: &IntentEmbeddingTable,
    data: &[(Item, Vec<String>)],
    threshold: f64,
) -> Result<LabelingMetrics, SimError> {
    let err = |e: crate::repr::ReprError| SimError::Component(e.to_string());
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut ap_sum = 0.0;
    for (item, truth) in data {
        let truth: BTreeSet<String> = truth.iter().map(|l| crate::graph::canonicalize(l)).collect();
        let x = matcher.item_vector(item).map_err(err)?;
        let ranked = label_item(&x, table, &matcher.params, usize::MAX, 0.0).map_err(err)?;
        let mut found = 0;
        let mut precision_sum = 0.0;
        for (r, s) in ranked.iter().enumerate() {
            let relevant = truth.contains(&s.label);
            if relevant {
                found += 1;
                precision_sum += found as f64 / (r + 1) as f64;
            }
            match (s.score >= threshold, relevant) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        fn_ += truth.len() - found;
        ap_sum += if truth.is_empty() {
            0.0
        } else {
            precision_sum / truth.len() as f64
        };
    }
    let denom = (2 * tp + fp + fn_) as f64;
    Ok(LabelingMetrics {
        micro_f1: if denom == 0.0 { 0.0 } else { 2.0 * tp as f64 / denom },
        map: if data.is_empty() { 0.0 } else { ap_sum / data.len() as f64 },
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub fused: bool,
    pub rules: bool,
    pub recall_at_1: f64,
    pub recall_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextIntentReport {
    /// plain, plain+rules, fused, fused+rules.
    pub rows: Vec<AblationRow>,
    /// Share of points whose true intent ends a fired rule chain.
    pub rule_match_rate: f64,
    pub points: usize,
}

impl NextIntentReport {
    pub fn row(&self, fused: bool, rules: bool) -> &AblationRow {
        self.rows
            .iter()
            .find(|r| r.fused == fused && r.rules == rules)
            .expect("grid has every combination")
    }
}

/// The 4-way ablation: each predictor with and without rule
/// post-processing, scored by next-intent recall@1/@10.
pub fn evaluate_next_intent(
    plain: &PredictorModel,
    fused: &PredictorModel,
    points: &[HeldOutPoint],
    graph: &ConceptGraph,
    rules: &RuleConfig,
) -> Result<NextIntentReport, SimError> {
    let labels = plain.vocab.intents.clone();
    let truth = points
        .iter()
        .map(|(_, t)| truth_index(&labels, t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(4);
    for (is_fused, model) in [(false, plain), (true, fused)] {
        for with_rules in [false, true] {
            let f = ModelForecaster {
                model,
                graph: with_rules.then_some(graph),
                rules: rules.clone(),
            };
            let dists = f.distributions(&labels, points)?;
            rows.push(AblationRow {
                fused: is_fused,
                rules: with_rules,
                recall_at_1: recall_at(&dists, &truth, 1),
                recall_at_10: recall_at(&dists, &truth, 10),
            });
        }
    }
    let uniform = vec![1.0 / labels.len() as f64; labels.len()];
    let matched = points
        .iter()
        .zip(&truth)
        .filter(|((c, t), &k)| {
            let recent = recent_intents(c, t.ts, rules);
            let (_, m) = apply_rules(&uniform, &labels, &recent, graph, rules);
            m.iter().any(|m| m.path.last() == Some(&labels[k]))
        })
        .count();
    Ok(NextIntentReport {
        rows,
        rule_match_rate: if points.is_empty() {
            0.0
        } else {
            matched as f64 / points.len() as f64
        },
        points: points.len(),
    })
}

/// Rule settings used for evaluation on simulated logs: rules only fire from
/// the current session.
pub fn eval_rules(beta: f64) -> RuleConfig {
    RuleConfig {
        beta,
        session_gap: Some(SESSION_GAP),
        ..RuleConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    /// Echo of the configuration the report was produced with.
    pub config: serde_json::Value,
    /// Next-intent recall of the full system (fused predictor with rules).
    pub recall_at_1: f64,
    pub recall_at_10: f64,
    pub micro_f1: f64,
    pub map: f64,
    pub hit_n: usize,
    pub hit_rate: f64,
    pub popularity_hit_rate: f64,
    pub rule_match_rate: f64,
    pub ablation: Vec<AblationRow>,
    pub points: usize,
}

impl EvalReport {
    pub fn new(
        seed: u64,
        config: serde_json::Value,
        next: &NextIntentReport,
        labeling: &LabelingMetrics,
        full: &RecsysResult,
        popularity: &RecsysResult,
    ) -> Self {
        let best = next.row(true, true);
        EvalReport {
            seed,
            config,
            recall_at_1: best.recall_at_1,
            recall_at_10: best.recall_at_10,
            micro_f1: labeling.micro_f1,
            map: labeling.map,
            hit_n: full.hit_at.len(),
            hit_rate: full.hit_rate(),
            popularity_hit_rate: popularity.hit_rate(),
            rule_match_rate: next.rule_match_rate,
            ablation: next.rows.clone(),
            points: next.points,
        }
    }

    /// All metrics lie in [0, 1].
    pub fn metrics_in_range(&self) -> bool {
        let mut all = vec![
            self.recall_at_1,
            self.recall_at_10,
            self.micro_f1,
            self.map,
            self.hit_rate,
            self.popularity_hit_rate,
            self.rule_match_rate,
        ];
        for r in &self.ablation {
            all.push(r.recall_at_1);
            all.push(r.recall_at_10);
        }
        all.iter().all(|m| (0.0..=1.0).contains(m))
    }

    pub fn table(&self) -> String {
        let mut s = format!("seed {}  held-out points {}\n\n", self.seed, self.points);
        s += "predictor  rules  recall@1  recall@10\n";
        for r in &self.ablation {
            s += &format!(
                "{:<9}  {:<5}  {:>8.4}  {:>9.4}\n",
                if r.fused { "fused" } else { "plain" },
                if r.rules { "on" } else { "off" },
                r.recall_at_1,
                r.recall_at_10
            );
        }
        s += &format!(
            "\nlabeling micro-F1 {:.4}  MAP {:.4}\nhit-rate@{} {:.4} (popularity only {:.4})\nrule-match rate {:.4}\n",
            self.micro_f1, self.map, self.hit_n, self.hit_rate, self.popularity_hit_rate, self.rule_match_rate
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(user: &str, ts: u64, intent: &str) -> UserEvent {
        UserEvent {
            user: user.into(),
            ts,
            loc: "c0".into(),
            intent: Some(intent.into()),
            item: None,
        }
    }

    #[test]
    fn recall_counts_ties_by_index() {
        let d = vec![vec![0.5, 0.5, 0.0], vec![0.2, 0.3, 0.5]];
        assert_eq!(recall_at(&d, &[0, 0], 1), 0.5);
        assert_eq!(recall_at(&d, &[1, 0], 1), 0.0);
        assert_eq!(recall_at(&d, &[1, 0], 3), 1.0);
        assert_eq!(recall_at(&[], &[], 1), 0.0);
    }

    #[test]
    fn hold_out_keeps_last_event_per_user() {
        let events = vec![ev("a", 1, "x"), ev("a", 2, "y"), ev("b", 5, "z"), ev("c", 3, "x"), ev("c", 9, "z")];
        let h = hold_out_last(&events);
        assert_eq!(h.points.len(), 2);
        assert_eq!(h.points[0].1.ts, 2);
        assert_eq!(h.points[1].0.len(), 1);
        assert_eq!(h.train.len(), 3);
    }

    fn toy_catalog() -> Catalog {
        let entry = |id: &str, pop: f64, scores: Vec<f64>, labels: Vec<usize>| {
            let z: f64 = scores.iter().sum();
            CatalogEntry {
                id: id.into(),
                popularity: pop,
                share: scores.iter().map(|s| s / z).collect(),
                scores,
                labels,
            }
        };
        let entries = vec![
            entry("i0", 1.0, vec![0.9, 0.1, 0.1], vec![0]),
            entry("i1", 0.8, vec![0.1, 0.9, 0.1], vec![1]),
            entry("i2", 0.1, vec![0.1, 0.1, 0.9], vec![2]),
            entry("i3", 0.05, vec![0.1, 0.8, 0.7], vec![1, 2]),
        ];
        Catalog {
            labels: vec!["a".into(), "b".into(), "c".into()],
            entries,
            by_popularity: vec![0, 1, 2, 3],
        }
    }

    #[test]
    fn uniform_intents_rank_by_popularity() {
        let c = toy_catalog();
        let cfg = RecsysConfig {
            top_k_intents: 3,
            ..Default::default()
        };
        let uniform = vec![1.0 / 3.0; 3];
        let a = rank_items(&c, Some(&uniform), &cfg);
        let b = rank_items(&c, None, &cfg);
        assert_eq!(a, vec![0, 1, 2, 3]);
        assert_eq!(b, vec![0, 1, 2, 3]);
    }

    #[test]
    fn full_pool_without_popularity_follows_match_score() {
        let c = toy_catalog();
        let cfg = RecsysConfig {
            recall_pool_size: c.entries.len(),
            popularity_recall: c.entries.len(),
            w_popularity: 0.0,
            ..Default::default()
        };
        let d = [0.1, 0.2, 0.7];
        let ranked = rank_items(&c, Some(&d), &cfg);
        let mut expect: Vec<usize> = (0..4).collect();
        expect.sort_by(|&a, &b| match_score(&c.entries[b], &d).total_cmp(&match_score(&c.entries[a], &d)));
        assert_eq!(ranked, expect);
    }

    #[test]
    fn pool_truncation_drops_late_popularity_items() {
        let c = toy_catalog();
        let cfg = RecsysConfig {
            top_k_intents: 1,
            recall_pool_size: 2,
            ..Default::default()
        };
        let ranked = rank_items(&c, Some(&[0.0, 0.0, 1.0]), &cfg);
        assert_eq!(ranked.len(), 2);
        assert!(ranked.contains(&2) && ranked.contains(&3));
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{Batch, Case, PredictorModel, Token};
use super::tape::Tape;
use super::PredictorError;
use crate::graph::{ConceptGraph, NodeKind};
use crate::mining::UserEvent;
use crate::util::{Fnv64, GlobalTime};

/// A future moment to predict for. Without a location the last observed
/// one is reused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub ts: u64,
    #[serde(default)]
    pub loc: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub beta: f64,
    /// Number of most recent observed intents that can fire rules.
    pub window: usize,
    pub depth: usize,
    /// If set, only context events within this many seconds of the
    /// following one (chained back from the first slot) count as recent.
    pub session_gap: Option<u64>,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            beta: 0.5,
            window: 3,
            depth: 2,
            session_gap: None,
        }
    }
}

/// A Consequent chain that fired, as labels from the observed intent to the
/// boosted one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleMatch {
    pub path: Vec<String>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedIntent {
    /// Model id; label index + 1.
    pub id: usize,
    pub label: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    /// One distribution over the intent vocabulary per horizon step.
    pub distributions: Vec<Vec<f64>>,
    /// Top-K of the first step.
    pub top_k: Vec<RankedIntent>,
    pub explanations: Vec<RuleMatch>,
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

impl PredictorModel {
    fn case(&self, context: &[UserEvent], slots: &[Slot]) -> Result<Case, PredictorError> {
        if context.is_empty() {
            return Err(PredictorError::EmptyContext);
        }
        if context.windows(2).any(|w| w[1].ts < w[0].ts) {
            return Err(PredictorError::UnsortedContext);
        }
        if slots.is_empty() || slots.len() > self.config.horizon {
            return Err(PredictorError::Horizon {
                requested: slots.len(),
                max: self.config.horizon,
            });
        }
        let ctx = &context[context.len().saturating_sub(self.config.context_len)..];
        let last_loc = &ctx[ctx.len() - 1].loc;
        Ok(Case {
            context: ctx.iter().map(|e| self.token(e)).collect(),
            future: slots
                .iter()
                .map(|s| Token {
                    intent: 0,
                    loc: self.vocab.location_id(s.loc.as_deref().unwrap_or(last_loc)).unwrap_or(0),
                    time: GlobalTime::from_epoch(s.ts),
                })
                .collect(),
        })
    }

    /// One distribution per slot, from a single forward pass.
    pub fn predict(&self, context: &[UserEvent], slots: &[Slot]) -> Result<Vec<Vec<f64>>, PredictorError> {
        let case = self.case(context, slots)?;
        Ok(self.run(&[&case]).pop().expect("one case"))
    }

    /// Next-step distribution for many (context, ts, loc) queries, batched.
    pub fn predict_next_many(&self, queries: &[(&[UserEvent], u64, &str)]) -> Result<Vec<Vec<f64>>, PredictorError> {
        let cases = queries
            .iter()
            .map(|(ctx, ts, loc)| {
                self.case(
                    ctx,
                    &[Slot {
                        ts: *ts,
                        loc: Some(loc.to_string()),
                    }],
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = Vec::with_capacity(cases.len());
        for chunk in cases.chunks(256) {
            let refs: Vec<&Case> = chunk.iter().collect();
            out.extend(self.run(&refs).into_iter().map(|mut d| d.swap_remove(0)));
        }
        Ok(out)
    }

    fn run(&self, cases: &[&Case]) -> Vec<Vec<Vec<f64>>> {
        let batch = Batch::new(&self.config, cases);
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &batch);
        let logits = tape.value(fwd.logits);
        let h = batch.horizon;
        (0..cases.len())
            .map(|c| (0..h).map(|j| softmax(logits.row(c * h + j).as_slice().expect("row-major"))).collect())
            .collect()
    }

    /// Attention probabilities of every attention call for one context, as
    /// [call][head][query][key] flattened per call.
    pub fn attention_maps(&self, context: &[UserEvent], slots: &[Slot]) -> Result<Vec<Vec<f64>>, PredictorError> {
        let case = self.case(context, slots)?;
        let batch = Batch::new(&self.config, &[&case]);
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &batch);
        Ok(fwd
            .attention
            .iter()
            .map(|v| tape.attention_probs(*v).expect("attention node").to_vec())
            .collect())
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Fnv64::new();
        h.write(serde_json::to_string(&self.config).expect("config serializes").as_bytes());
        for l in self.vocab.intents.iter().chain(&self.vocab.locations) {
            h.write(l.as_bytes());
            h.write(&[0]);
        }
        for (name, p) in &self.params {
            h.write(name.as_bytes());
            for x in p.iter() {
                h.write(&x.to_bits().to_le_bytes());
            }
        }
        format!("{:016x}", h.finish())
    }
}

/// The last `window` observed intents that may fire rules for a prediction
/// at `at`.
pub fn recent_intents(context: &[UserEvent], at: u64, rules: &RuleConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut next_ts = at;
    for e in context.iter().rev() {
        if out.len() == rules.window {
            break;
        }
        if rules.session_gap.is_some_and(|g| next_ts.saturating_sub(e.ts) > g) {
            break;
        }
        next_ts = e.ts;
        if let Some(l) = &e.intent {
            out.push(l.clone());
        }
    }
    out.reverse();
    out
}

/// Boosts every intent reachable from a recent intent through Consequent
/// chains of at most `depth` edges: p'(j) = p(j) (1 + beta w(j)) with w(j)
/// the best chain confidence, then renormalizes. `labels[i]` names entry i
/// of `dist`. Intents with zero probability stay at zero. With beta = 0 or
/// no match the input is returned unchanged.
pub fn apply_rules(
    dist: &[f64],
    labels: &[String],
    recent: &[String],
    graph: &ConceptGraph,
    rules: &RuleConfig,
) -> (Vec<f64>, Vec<RuleMatch>) {
    assert_eq!(dist.len(), labels.len(), "one label per probability");
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut weight: BTreeMap<usize, f64> = BTreeMap::new();
    let mut matches = Vec::new();
    let start = recent.len().saturating_sub(rules.window);
    for r in &recent[start..] {
        let Some(node) = graph.find(NodeKind::Intent, r) else { continue };
        let Ok(chains) = graph.consequent_chains(node, rules.depth) else { continue };
        for chain in chains {
            let end = graph.label(*chain.path.last().expect("non-empty chain"));
            let Some(&j) = index.get(end) else { continue };
            let w = weight.entry(j).or_insert(0.0);
            *w = w.max(chain.confidence);
            let m = RuleMatch {
                path: chain.path.iter().map(|id| graph.label(*id).to_string()).collect(),
                confidence: chain.confidence,
            };
            if !matches.contains(&m) {
                matches.push(m);
            }
        }
    }
    matches.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| a.path.cmp(&b.path)));
    if rules.beta == 0.0 || weight.is_empty() {
        return (dist.to_vec(), matches);
    }
    let mut out = dist.to_vec();
    for (&j, &w) in &weight {
        out[j] *= 1.0 + rules.beta * w;
    }
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    (out, matches)
}

/// Top-K by probability, ties by id.
pub fn top_k(dist: &[f64], labels: &[String], k: usize) -> Vec<RankedIntent> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(k)
        .map(|i| RankedIntent {
            id: i + 1,
            label: labels[i].clone(),
            probability: dist[i],
        })
        .collect()
}

/// predict, then rule post-processing on every step, then top-K of the
/// first step. Explanations list only chains ending in a returned intent.
pub fn predict_top_k(
    model: &PredictorModel,
    context: &[UserEvent],
    slots: &[Slot],
    k: usize,
    graph: Option<&ConceptGraph>,
    rules: &RuleConfig,
) -> Result<PredictionResult, PredictorError> {
    let mut distributions = model.predict(context, slots)?;
    let labels = &model.vocab.intents;
    let mut explanations = Vec::new();
    if let Some(graph) = graph {
        let recent = recent_intents(context, slots[0].ts, rules);
        for (step, d) in distributions.iter_mut().enumerate() {
            let (boosted, m) = apply_rules(d, labels, &recent, graph, rules);
            *d = boosted;
            if step == 0 {
                explanations = m;
            }
        }
    }
    let top = top_k(&distributions[0], labels, k);
    explanations.retain(|m| top.iter().any(|t| Some(&t.label) == m.path.last()));
    Ok(PredictionResult {
        distributions,
        top_k: top,
        explanations,
    })
}

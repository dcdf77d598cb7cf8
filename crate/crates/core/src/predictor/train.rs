use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;

use super::model::{Batch, Case, PredictorConfig, PredictorModel, PredictorVocab, Token};
use super::tape::Tape;
use super::PredictorError;
use crate::mining::{Session, UserEvent};
use crate::repr::IntentEmbeddingTable;
use crate::util::{self, GlobalTime};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPredictor {
    pub model: PredictorModel,
    /// Mean training loss per epoch.
    pub curve: Vec<f64>,
}

/// Concatenates each user's sessions, in session order, into one history.
pub fn user_histories(sessions: &[Session]) -> Vec<Vec<&UserEvent>> {
    let mut by_user: BTreeMap<&str, Vec<&Session>> = BTreeMap::new();
    for s in sessions {
        by_user.entry(&s.user).or_default().push(s);
    }
    by_user
        .into_values()
        .map(|mut ss| {
            ss.sort_by_key(|s| s.index);
            ss.into_iter().flat_map(|s| s.events.iter()).collect()
        })
        .collect()
}

fn strict_token(vocab: &PredictorVocab, e: &UserEvent) -> Result<Token, PredictorError> {
    let label = e.intent.as_deref().ok_or_else(|| {
        PredictorError::VocabMismatch(format!("event of {} at {} has no intent label", e.user, e.ts))
    })?;
    Ok(Token {
        intent: vocab
            .intent_id(label)
            .ok_or_else(|| PredictorError::VocabMismatch(format!("intent {label:?} is not in the vocabulary")))?,
        loc: vocab
            .location_id(&e.loc)
            .ok_or_else(|| PredictorError::VocabMismatch(format!("location {:?} is not in the vocabulary", e.loc)))?,
        time: GlobalTime::from_epoch(e.ts),
    })
}

/// One case per position k >= 1 of every history: the preceding events
/// (at most `context_len`) predict the next `horizon` events. Slots past
/// the end of a history repeat the last slot's time and carry no target.
pub(crate) fn build_cases(
    sessions: &[Session],
    config: &PredictorConfig,
    vocab: &PredictorVocab,
) -> Result<Vec<Case>, PredictorError> {
    let mut cases = Vec::new();
    for history in user_histories(sessions) {
        let tokens = history
            .iter()
            .map(|e| strict_token(vocab, e))
            .collect::<Result<Vec<_>, _>>()?;
        for k in 1..tokens.len() {
            let context = tokens[k.saturating_sub(config.context_len)..k].to_vec();
            let mut future: Vec<Token> = tokens[k..(k + config.horizon).min(tokens.len())].to_vec();
            while future.len() < config.horizon {
                let last = *future.last().expect("at least one future event");
                future.push(Token { intent: 0, ..last });
            }
            cases.push(Case { context, future });
        }
    }
    Ok(cases)
}

impl PredictorModel {
    /// Mean cross-entropy over the cases and its gradient per parameter.
    pub(crate) fn loss_and_grad(&self, cases: &[&Case]) -> (f64, Vec<Array2<f64>>) {
        let batch = Batch::new(&self.config, cases);
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &batch);
        let loss = tape.softmax_ce(fwd.logits, batch.targets.clone());
        let grads = tape.backward(loss);
        let g = fwd
            .params
            .iter()
            .zip(&self.params)
            .map(|(v, (_, p))| grads.get(*v).cloned().unwrap_or_else(|| Array2::zeros(p.raw_dim())))
            .collect();
        (tape.value(loss)[[0, 0]], g)
    }

    fn loss_only(&self, cases: &[&Case]) -> f64 {
        let batch = Batch::new(&self.config, cases);
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &batch);
        let loss = tape.softmax_ce(fwd.logits, batch.targets.clone());
        tape.value(loss)[[0, 0]]
    }

    /// Largest relative error between the analytic gradient and central
    /// differences over every parameter, on cases built from `sessions`.
    pub fn gradient_check(&self, sessions: &[Session], eps: f64) -> Result<f64, PredictorError> {
        let cases = build_cases(sessions, &self.config, &self.vocab)?;
        if cases.is_empty() {
            return Err(PredictorError::EmptyDataset);
        }
        let refs: Vec<&Case> = cases.iter().collect();
        let (_, grads) = self.loss_and_grad(&refs);
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        for (pi, g) in grads.iter().enumerate() {
            for idx in 0..g.len() {
                let orig = probe.params[pi].1.as_slice().expect("standard layout")[idx];
                probe.params[pi].1.as_slice_mut().expect("standard layout")[idx] = orig + eps;
                let up = probe.loss_only(&refs);
                probe.params[pi].1.as_slice_mut().expect("standard layout")[idx] = orig - eps;
                let down = probe.loss_only(&refs);
                probe.params[pi].1.as_slice_mut().expect("standard layout")[idx] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = g.as_slice().expect("standard layout")[idx];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            }
        }
        Ok(worst)
    }
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const CLIP_NORM: f64 = 5.0;

impl Adam {
    fn new(params: &[(String, Array2<f64>)]) -> Self {
        Adam {
            m: params.iter().map(|(_, p)| Array2::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|(_, p)| Array2::zeros(p.raw_dim())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [(String, Array2<f64>)], grads: &mut [Array2<f64>], lr: f64) {
        let norm = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        if norm > CLIP_NORM {
            grads.iter_mut().for_each(|g| *g *= CLIP_NORM / norm);
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (((_, p), g), (m, v)) in params.iter_mut().zip(grads.iter()).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            });
        }
    }
}

/// Copies KG embedding rows into the intent table, rescaling each to the
/// mean norm of the randomly initialized rows.
fn fuse(model: &mut PredictorModel, table: &IntentEmbeddingTable) -> Result<usize, PredictorError> {
    let d = model.config.d_model;
    if table.dim() != d {
        return Err(PredictorError::Config(format!(
            "KG embedding dimension {} does not match d_model {d}",
            table.dim()
        )));
    }
    let labels = model.vocab.intents.clone();
    let emb = model.param_mut("emb.intent");
    let target = (1..emb.nrows())
        .map(|r| emb.row(r).dot(&emb.row(r)).sqrt())
        .sum::<f64>()
        / (emb.nrows() - 1).max(1) as f64;
    let mut fused = 0;
    for (i, label) in labels.iter().enumerate() {
        if let Some(v) = table.vector(label) {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                emb.row_mut(i + 1)
                    .iter_mut()
                    .zip(&v)
                    .for_each(|(e, x)| *e = x * target / n);
                fused += 1;
            }
        }
    }
    Ok(fused)
}

/// Teacher-forced cross-entropy training with seeded minibatch Adam. With
/// `fuse_kg`, intent embedding rows start from the KG table and are then
/// fine-tuned.
pub fn train_predictor(
    sessions: &[Session],
    config: &PredictorConfig,
    vocab: PredictorVocab,
    kg_table: Option<&IntentEmbeddingTable>,
) -> Result<TrainedPredictor, PredictorError> {
    let mut model = PredictorModel::init(config, vocab)?;
    if config.fuse_kg {
        let table = kg_table.ok_or_else(|| PredictorError::Config("fuse_kg needs a KG embedding table".into()))?;
        fuse(&mut model, table)?;
    }
    let cases = build_cases(sessions, config, &model.vocab)?;
    if cases.is_empty() {
        return Err(PredictorError::EmptyDataset);
    }
    let mut rng = util::rng(config.seed, 302);
    let mut order: Vec<usize> = (0..cases.len()).collect();
    let mut adam = Adam::new(&model.params);
    let mut curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Case> = chunk.iter().map(|&i| &cases[i]).collect();
            let (loss, mut grads) = model.loss_and_grad(&batch);
            total += loss * chunk.len() as f64;
            adam.step(&mut model.params, &mut grads, config.learning_rate);
        }
        curve.push(total / cases.len() as f64);
        if !model.is_finite() {
            return Err(PredictorError::NonFinite);
        }
    }
    Ok(TrainedPredictor { model, curve })
}

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DenseMatrix, IntentEmbeddingTable, ReprError, TextEncoder, TextEncoderConfig};
use crate::graph::NodeId;
use crate::records::{read_records, write_records, Record, RecordSet};
use crate::util;

const FORMAT: &str = "intentkg-matcher";
const VERSION: u32 = 1;
const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Query,
    Service,
    Bill,
    Coupon,
    Store,
    Review,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub kind: ItemKind,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<Vec<f64>>,
}

impl Item {
    pub fn text(id: &str, kind: ItemKind, text: &str) -> Self {
        Item {
            id: id.to_string(),
            kind,
            text: text.to_string(),
            image: None,
        }
    }

    /// Text vector followed by the image vector (zeros when absent),
    /// L2-normalized as a whole when the encoder normalizes.
    pub fn vector(&self, encoder: &TextEncoder, image_dim: usize) -> Result<Vec<f64>, ReprError> {
        if self.text.trim().is_empty() && self.image.is_none() {
            return Err(ReprError::EmptyItem(self.id.clone()));
        }
        let mut v = encoder.encode(&self.text);
        match &self.image {
            Some(img) if img.len() != image_dim => {
                return Err(ReprError::Dimension {
                    context: format!("image vector of item {}", self.id),
                    expected: image_dim,
                    found: img.len(),
                })
            }
            Some(img) => v.extend_from_slice(img),
            None => v.resize(v.len() + image_dim, 0.0),
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ReprError::NonFinite(format!("item {}", self.id)));
        }
        if encoder.config().normalize {
            normalize(&mut v);
        }
        Ok(v)
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Asymmetric { gamma_pos: f64, gamma_neg: f64 },
}

impl LossKind {
    pub fn asymmetric() -> Self {
        LossKind::Asymmetric {
            gamma_pos: 0.0,
            gamma_neg: 2.0,
        }
    }

    /// Loss and d(loss)/d(logit) for one pair.
    fn pair(self, z: f64, positive: bool) -> (f64, f64) {
        let p = sigmoid(z);
        // log p and log(1-p) without cancellation
        let log_p = -softplus(-z);
        let log_q = -softplus(z);
        match (self, positive) {
            (LossKind::Bce, true) => (-log_p, p - 1.0),
            (LossKind::Bce, false) => (-log_q, p),
            (LossKind::Asymmetric { gamma_pos: g, .. }, true) => {
                let q = 1.0 - p;
                let loss = -q.powf(g) * log_p;
                let grad = if g == 0.0 {
                    -q
                } else {
                    g * p * q.powf(g) * log_p - q.powf(g + 1.0)
                };
                (loss, grad)
            }
            (LossKind::Asymmetric { gamma_neg: g, .. }, false) => {
                let q = 1.0 - p;
                let loss = -p.powf(g) * log_q;
                let grad = if g == 0.0 {
                    p
                } else {
                    -g * p.powf(g) * q * log_q + p.powf(g + 1.0)
                };
                (loss, grad)
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    pub encoder: TextEncoderConfig,
    /// Width of precomputed image vectors; 0 disables the image slot.
    pub image_dim: usize,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Uniform init half-width; 0 means zero initialization.
    pub init_scale: f64,
    pub seed: u64,
    /// Run gradient descent in whitened item and intent coordinates; the
    /// learned projection is mapped back, so the model is unchanged.
    pub precondition: bool,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            encoder: TextEncoderConfig::default(),
            image_dim: 0,
            loss: LossKind::Bce,
            learning_rate: 0.1,
            epochs: 500,
            init_scale: 0.0,
            seed: 0,
            precondition: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatcherParams {
    /// item-dim x intent-dim
    pub projection: DenseMatrix,
    pub bias: f64,
    pub loss: LossKind,
}

impl MatcherParams {
    pub fn zeros(item_dim: usize, intent_dim: usize, loss: LossKind) -> Self {
        MatcherParams {
            projection: DenseMatrix::zeros(item_dim, intent_dim),
            bias: 0.0,
            loss,
        }
    }

    pub fn random(item_dim: usize, intent_dim: usize, loss: LossKind, scale: f64, seed: u64) -> Self {
        let mut rng = util::rng(seed, 21);
        let mut p = Array2::zeros((item_dim, intent_dim));
        if scale > 0.0 {
            p.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
        }
        MatcherParams {
            projection: DenseMatrix::from_array(p),
            bias: 0.0,
            loss,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.projection.is_finite() && self.bias.is_finite()
    }
}

/// `sigmoid(itemᵀ P intent + b)`; the logit is clamped so the score stays
/// strictly inside (0, 1).
pub fn score_item_intent(item: &[f64], intent: &[f64], params: &MatcherParams) -> Result<f64, ReprError> {
    let p = params.projection.as_array();
    if item.len() != p.nrows() {
        return Err(ReprError::Dimension {
            context: "item vector".into(),
            expected: p.nrows(),
            found: item.len(),
        });
    }
    if intent.len() != p.ncols() {
        return Err(ReprError::Dimension {
            context: "intent vector".into(),
            expected: p.ncols(),
            found: intent.len(),
        });
    }
    let pe = p.dot(&ndarray::ArrayView1::from(intent));
    let z: f64 = item.iter().zip(pe.iter()).map(|(a, b)| a * b).sum::<f64>() + params.bias;
    Ok(sigmoid(z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)))
}

/// A dense multi-label problem: item features X (N x D), intent embeddings
/// E (M x d) and targets Y (N x M).
#[derive(Debug, Clone)]
pub struct MatcherProblem {
    pub items: Array2<f64>,
    pub intents: Array2<f64>,
    pub targets: Array2<f64>,
}

impl MatcherProblem {
    pub fn new(items: Array2<f64>, intents: Array2<f64>, targets: Array2<f64>) -> Result<Self, ReprError> {
        if items.nrows() == 0 {
            return Err(ReprError::EmptyDataset);
        }
        if targets.dim() != (items.nrows(), intents.nrows()) {
            return Err(ReprError::Dimension {
                context: "target matrix".into(),
                expected: items.nrows() * intents.nrows(),
                found: targets.len(),
            });
        }
        Ok(MatcherProblem {
            items,
            intents,
            targets,
        })
    }

    /// Build from labelled items, resolving intent labels against `table`.
    pub fn from_dataset(
        dataset: &[(Item, Vec<String>)],
        table: &IntentEmbeddingTable,
        encoder: &TextEncoder,
        image_dim: usize,
    ) -> Result<Self, ReprError> {
        if dataset.is_empty() {
            return Err(ReprError::EmptyDataset);
        }
        let dim = encoder.dim() + image_dim;
        let mut x = Array2::zeros((dataset.len(), dim));
        let mut y = Array2::zeros((dataset.len(), table.len()));
        for (i, (item, labels)) in dataset.iter().enumerate() {
            let v = item.vector(encoder, image_dim)?;
            x.row_mut(i).assign(&Array1::from(v));
            for l in labels {
                let j = table
                    .index_of_label(l)
                    .ok_or_else(|| ReprError::UnknownIntent(l.clone()))?;
                y[[i, j]] = 1.0;
            }
        }
        MatcherProblem::new(x, table.vectors.as_array().clone(), y)
    }

    fn logits(&self, params: &MatcherParams) -> Array2<f64> {
        let pe = params.projection.as_array().dot(&self.intents.t());
        let mut z = self.items.dot(&pe);
        z += params.bias;
        z
    }

    pub fn loss(&self, params: &MatcherParams) -> f64 {
        let z = self.logits(params);
        let total: f64 = z
            .iter()
            .zip(self.targets.iter())
            .map(|(&z, &y)| params.loss.pair(z, y > 0.5).0)
            .sum();
        total / z.len() as f64
    }

    /// Mean loss over all item-intent pairs and its gradient with respect to
    /// (projection, bias).
    pub fn loss_and_grad(&self, params: &MatcherParams) -> (f64, Array2<f64>, f64) {
        let mut z = self.logits(params);
        let scale = 1.0 / z.len() as f64;
        let mut total = 0.0;
        ndarray::Zip::from(&mut z).and(&self.targets).for_each(|z, &y| {
            let (l, g) = params.loss.pair(*z, y > 0.5);
            total += l;
            *z = g * scale;
        });
        let grad_b = z.sum();
        let grad_p = self.items.t().dot(&z).dot(&self.intents);
        (total * scale, grad_p, grad_b)
    }

    /// Max relative error between the analytic gradient and central finite
    /// differences over every parameter. Relative error is
    /// `|a - n| / max(|a|, |n|, 1e-6)`.
    pub fn gradient_check(&self, params: &MatcherParams, epsilon: f64) -> f64 {
        let (_, grad_p, grad_b) = self.loss_and_grad(params);
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        let mut worst = 0.0f64;
        let mut probe = params.clone();
        let (rows, cols) = grad_p.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = params.projection.get(r, c);
                probe.projection.set(r, c, orig + epsilon);
                let up = self.loss(&probe);
                probe.projection.set(r, c, orig - epsilon);
                let down = self.loss(&probe);
                probe.projection.set(r, c, orig);
                worst = worst.max(rel(grad_p[[r, c]], (up - down) / (2.0 * epsilon)));
            }
        }
        probe.bias = params.bias + epsilon;
        let up = self.loss(&probe);
        probe.bias = params.bias - epsilon;
        let down = self.loss(&probe);
        worst.max(rel(grad_b, (up - down) / (2.0 * epsilon)))
    }
}

#[derive(Debug, Clone)]
pub struct TrainedMatcher {
    pub params: MatcherParams,
    pub encoder: TextEncoder,
    pub image_dim: usize,
    /// Loss before each update, then the final loss.
    pub loss_history: Vec<f64>,
}

impl TrainedMatcher {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history is never empty")
    }

    /// Stable hash of everything that affects scoring.
    pub fn fingerprint(&self) -> String {
        let mut h = util::Fnv64::new();
        h.write(serde_json::to_string(self.encoder.config()).expect("config serializes").as_bytes());
        h.write(&(self.image_dim as u64).to_le_bytes());
        h.write(&self.params.bias.to_bits().to_le_bytes());
        for x in self.params.projection.as_array().iter() {
            h.write(&x.to_bits().to_le_bytes());
        }
        format!("{:016x}", h.finish())
    }

    pub fn item_vector(&self, item: &Item) -> Result<Vec<f64>, ReprError> {
        item.vector(&self.encoder, self.image_dim)
    }
}

/// T such that the rows of `m T` have identity second moment (up to a small
/// ridge): T = L⁻ᵀ for the Cholesky factor L of mᵀm / n + λI.
fn whitening(m: &Array2<f64>) -> Array2<f64> {
    let (n, d) = m.dim();
    let gram = m.t().dot(m) / n as f64;
    let ridge = 1e-3 * gram.diag().sum() / d as f64 + 1e-12;
    let c = nalgebra::DMatrix::from_fn(d, d, |i, j| gram[[i, j]] + if i == j { ridge } else { 0.0 });
    let l = nalgebra::Cholesky::new(c).expect("ridge makes the Gram matrix positive definite").l();
    let linv = l
        .solve_lower_triangular(&nalgebra::DMatrix::identity(d, d))
        .expect("Cholesky factor is invertible");
    Array2::from_shape_fn((d, d), |(i, j)| linv[(j, i)])
}

/// Full-batch gradient descent with a fixed learning rate.
pub fn train_matcher(
    dataset: &[(Item, Vec<String>)],
    table: &IntentEmbeddingTable,
    config: &MatcherConfig,
) -> Result<TrainedMatcher, ReprError> {
    let encoder = TextEncoder::new(config.encoder.clone());
    let original = MatcherProblem::from_dataset(dataset, table, &encoder, config.image_dim)?;
    let transforms = config
        .precondition
        .then(|| (whitening(&original.items), whitening(&original.intents)));
    let problem = match &transforms {
        Some((tx, tv)) => MatcherProblem {
            items: original.items.dot(tx),
            intents: original.intents.dot(tv),
            targets: original.targets.clone(),
        },
        None => original.clone(),
    };
    let mut params = MatcherParams::random(
        problem.items.ncols(),
        table.dim(),
        config.loss,
        config.init_scale,
        config.seed,
    );
    let mut history = Vec::with_capacity(config.epochs + 1);
    for _ in 0..config.epochs {
        let (loss, gp, gb) = problem.loss_and_grad(&params);
        history.push(loss);
        params
            .projection
            .as_array_mut()
            .scaled_add(-config.learning_rate, &gp);
        params.bias -= config.learning_rate * gb;
    }
    if let Some((tx, tv)) = &transforms {
        let p = tx.dot(params.projection.as_array()).dot(&tv.t());
        params.projection = DenseMatrix::from_array(p);
    }
    history.push(original.loss(&params));
    if !params.is_finite() {
        return Err(ReprError::NonFinite("matcher parameters".into()));
    }
    Ok(TrainedMatcher {
        params,
        encoder,
        image_dim: config.image_dim,
        loss_history: history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentScore {
    pub intent: NodeId,
    pub label: String,
    pub score: f64,
}

/// Score every intent in the table and keep those at or above `threshold`,
/// best first (ties by intent id), at most `top_k`.
pub fn label_item(
    item_vector: &[f64],
    table: &IntentEmbeddingTable,
    params: &MatcherParams,
    top_k: usize,
    threshold: f64,
) -> Result<Vec<IntentScore>, ReprError> {
    let p = params.projection.as_array();
    if item_vector.len() != p.nrows() {
        return Err(ReprError::Dimension {
            context: "item vector".into(),
            expected: p.nrows(),
            found: item_vector.len(),
        });
    }
    let mut x = Array1::from(item_vector.to_vec());
    let n = x.dot(&x).sqrt();
    if n > 0.0 {
        x /= n;
    }
    let xp = x.dot(p);
    let logits = table.vectors.as_array().dot(&xp);
    let mut out: Vec<IntentScore> = logits
        .iter()
        .enumerate()
        .map(|(j, &z)| IntentScore {
            intent: table.ids[j],
            label: table.labels[j].clone(),
            score: sigmoid((z + params.bias).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)),
        })
        .filter(|s| s.score >= threshold)
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.intent.cmp(&b.intent)));
    out.truncate(top_k);
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Meta {
    loss: LossKind,
    encoder: TextEncoderConfig,
    image_dim: usize,
    loss_history: Vec<f64>,
}

pub fn write_matcher<W: Write>(m: &TrainedMatcher, out: W) -> Result<(), ReprError> {
    let meta = Meta {
        loss: m.params.loss,
        encoder: m.encoder.config().clone(),
        image_dim: m.image_dim,
        loss_history: m.loss_history.clone(),
    };
    let p = &m.params.projection;
    let records = vec![
        Record::Header {
            format: FORMAT.into(),
            version: VERSION,
            meta: serde_json::to_value(meta).expect("meta serializes"),
        },
        Record::Matrix {
            name: "projection".into(),
            rows: p.rows(),
            cols: p.cols(),
            data: p.data(),
        },
        Record::Scalar {
            name: "bias".into(),
            value: m.params.bias,
        },
    ];
    write_records(&records, out)?;
    Ok(())
}

pub fn read_matcher<R: BufRead>(input: R) -> Result<TrainedMatcher, ReprError> {
    let set = RecordSet::new(read_records(input)?, FORMAT, VERSION)?;
    let meta: Meta = serde_json::from_value(set.meta().clone()).map_err(|e| ReprError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if meta.loss_history.is_empty() {
        return Err(ReprError::Parse {
            line: 1,
            message: "empty loss history".into(),
        });
    }
    let (rows, cols, data) = set.matrix("projection")?;
    let params = MatcherParams {
        projection: DenseMatrix::from_vec(rows, cols, data.to_vec())?,
        bias: set.scalar("bias")?,
        loss: meta.loss,
    };
    if rows != meta.encoder.dim + meta.image_dim {
        return Err(ReprError::Dimension {
            context: "projection rows".into(),
            expected: meta.encoder.dim + meta.image_dim,
            found: rows,
        });
    }
    Ok(TrainedMatcher {
        params,
        encoder: TextEncoder::new(meta.encoder),
        image_dim: meta.image_dim,
        loss_history: meta.loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::example_graph;
    use crate::repr::{build_intent_embeddings, GcnConfig};

    fn micro_problem(seed: u64) -> MatcherProblem {
        let mut rng = util::rng(seed, 0);
        let mut x = Array2::zeros((5, 6));
        let mut e = Array2::zeros((4, 3));
        let mut y = Array2::zeros((5, 4));
        x.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        e.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        y.iter_mut().for_each(|v| *v = if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
        MatcherProblem::new(x, e, y).unwrap()
    }

    #[test]
    fn zero_params_score_half() {
        let p = MatcherParams::zeros(3, 2, LossKind::Bce);
        assert_eq!(score_item_intent(&[1.0, 2.0, 3.0], &[0.5, -1.0], &p).unwrap(), 0.5);
        assert!(score_item_intent(&[1.0], &[0.5, -1.0], &p).is_err());
    }

    #[test]
    fn score_monotone_in_bias_and_inside_unit_interval() {
        let mut p = MatcherParams::random(3, 2, LossKind::Bce, 0.5, 1);
        let mut last = 0.0;
        for b in [-1e6, -50.0, -1.0, 0.0, 1.0, 50.0, 1e6] {
            p.bias = b;
            let s = score_item_intent(&[0.2, 0.1, -0.3], &[1.0, 1.0], &p).unwrap();
            assert!(s > 0.0 && s < 1.0);
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn initial_loss_is_ln2() {
        let prob = micro_problem(1);
        let p = MatcherParams::zeros(6, 3, LossKind::Bce);
        assert!((prob.loss(&p) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let prob = micro_problem(2);
        for loss in [LossKind::Bce, LossKind::asymmetric(), LossKind::Asymmetric { gamma_pos: 1.0, gamma_neg: 4.0 }] {
            let zero = MatcherParams::zeros(6, 3, loss);
            assert!(prob.gradient_check(&zero, 1e-5) < 1e-4, "{loss:?}");
            let rand = MatcherParams::random(6, 3, loss, 0.8, 3);
            assert!(prob.gradient_check(&rand, 1e-5) < 1e-4, "{loss:?}");
        }
    }

    #[test]
    fn coarse_epsilon_is_less_accurate() {
        let prob = micro_problem(4);
        let p = MatcherParams::random(6, 3, LossKind::Bce, 1.0, 5);
        assert!(prob.gradient_check(&p, 1e-2) > prob.gradient_check(&p, 1e-3));
    }

    fn fixture() -> (Vec<(Item, Vec<String>)>, IntentEmbeddingTable) {
        let g = example_graph();
        let table = build_intent_embeddings(&g, &TextEncoder::default(), &GcnConfig::default()).unwrap();
        let data = vec![
            (Item::text("s1", ItemKind::Service, "Starbucks applet"), vec!["order coffee".into()]),
            (Item::text("s2", ItemKind::Store, "Starbucks reserve store"), vec!["order coffee".into()]),
            (Item::text("m1", ItemKind::Service, "Cinema ticket booking"), vec!["buy movie tickets".into()]),
            (Item::text("m2", ItemKind::Coupon, "movie night coupon"), vec!["buy movie tickets".into()]),
            (Item::text("t1", ItemKind::Service, "Didi ride hailing"), vec!["take an internet taxi".into()]),
        ];
        (data, table)
    }

    #[test]
    fn loss_decreases_on_fixture() {
        let (data, table) = fixture();
        let m = train_matcher(&data, &table, &MatcherConfig { epochs: 10, ..Default::default() }).unwrap();
        assert!((m.loss_history[0] - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(m.loss_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn trained_fixture_prefers_coffee_for_starbucks() {
        let (data, table) = fixture();
        let m = train_matcher(&data, &table, &MatcherConfig::default()).unwrap();
        let x = m.item_vector(&data[0].0).unwrap();
        let coffee = score_item_intent(&x, &table.vector("order coffee").unwrap(), &m.params).unwrap();
        let movie = score_item_intent(&x, &table.vector("buy movie tickets").unwrap(), &m.params).unwrap();
        assert!(coffee > movie);
    }

    #[test]
    fn overfits_single_example() {
        let (data, table) = fixture();
        let one = &data[..1];
        let config = MatcherConfig {
            epochs: 200,
            learning_rate: 50.0,
            ..Default::default()
        };
        let m = train_matcher(one, &table, &config).unwrap();
        let x = m.item_vector(&one[0].0).unwrap();
        let s = score_item_intent(&x, &table.vector("order coffee").unwrap(), &m.params).unwrap();
        assert!(s >= 0.9, "score {s}");
    }

    #[test]
    fn errors_on_empty_and_unknown() {
        let (data, table) = fixture();
        assert!(matches!(
            train_matcher(&[], &table, &MatcherConfig::default()),
            Err(ReprError::EmptyDataset)
        ));
        let bad = vec![(data[0].0.clone(), vec!["fly to the moon".to_string()])];
        match train_matcher(&bad, &table, &MatcherConfig::default()) {
            Err(ReprError::UnknownIntent(l)) => assert_eq!(l, "fly to the moon"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_item_threshold_topk_and_scale() {
        let (data, table) = fixture();
        let m = train_matcher(&data, &table, &MatcherConfig::default()).unwrap();
        let x = m.item_vector(&data[2].0).unwrap();
        assert!(label_item(&x, &table, &m.params, 10, 1.0).unwrap().is_empty());
        let all = label_item(&x, &table, &m.params, usize::MAX, 0.0).unwrap();
        assert_eq!(all.len(), table.len());
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
        let top = label_item(&x, &table, &m.params, 1, 0.0).unwrap();
        assert_eq!(top[0], all[0]);
        let scaled: Vec<f64> = x.iter().map(|v| v * 7.5).collect();
        let again = label_item(&scaled, &table, &m.params, usize::MAX, 0.0).unwrap();
        let order = |v: &[IntentScore]| v.iter().map(|s| s.intent).collect::<Vec<_>>();
        assert_eq!(order(&again), order(&all));
    }

    #[test]
    fn training_is_reproducible_and_round_trips() {
        let (data, table) = fixture();
        let cfg = MatcherConfig {
            init_scale: 0.05,
            seed: 9,
            epochs: 50,
            loss: LossKind::asymmetric(),
            ..Default::default()
        };
        let a = train_matcher(&data, &table, &cfg).unwrap();
        let b = train_matcher(&data, &table, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        let mut buf = Vec::new();
        write_matcher(&a, &mut buf).unwrap();
        let back = read_matcher(buf.as_slice()).unwrap();
        assert_eq!(back.params, a.params);
        assert_eq!(back.loss_history, a.loss_history);
    }

    #[test]
    fn whitening_gives_identity_second_moment() {
        let mut rng = util::rng(6, 0);
        let mut x = Array2::zeros((200, 6));
        x.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        x.column_mut(2).mapv_inplace(|v| v * 40.0);
        let t = whitening(&x);
        let w = x.dot(&t);
        let m = w.t().dot(&w) / w.nrows() as f64;
        // the ridge shrinks the weak directions, but far less than the
        // 1600x spread of the raw second moment
        for ((i, j), v) in m.indexed_iter() {
            if i == j {
                assert!(*v > 0.5 && *v <= 1.0, "({i},{j}) = {v}");
            } else {
                assert!(v.abs() < 0.1, "({i},{j}) = {v}");
            }
        }
    }

    #[test]
    fn preconditioned_training_maps_back_to_original_space() {
        let (data, table) = fixture();
        let cfg = MatcherConfig {
            precondition: true,
            learning_rate: 2.0,
            epochs: 100,
            ..Default::default()
        };
        let m = train_matcher(&data, &table, &cfg).unwrap();
        let problem = MatcherProblem::from_dataset(&data, &table, &TextEncoder::new(cfg.encoder.clone()), 0).unwrap();
        assert!((problem.loss(&m.params) - m.final_loss()).abs() < 1e-9);
        let plain = train_matcher(&data, &table, &MatcherConfig { epochs: 100, ..Default::default() }).unwrap();
        assert!(m.final_loss() < plain.final_loss());
    }

    #[test]
    fn empty_item_rejected() {
        let item = Item::text("x", ItemKind::Query, "  ");
        assert!(matches!(item.vector(&TextEncoder::default(), 0), Err(ReprError::EmptyItem(_))));
        let with_image = Item {
            image: Some(vec![1.0, 0.0]),
            ..item
        };
        assert_eq!(with_image.vector(&TextEncoder::default(), 2).unwrap().len(), 66);
    }
}

use std::collections::BTreeMap;
use std::rc::Rc;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{AttnSpec, Tape, Var};
use super::PredictorError;
use crate::graph::canonicalize;
use crate::mining::UserEvent;
use crate::util::{self, GlobalTime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Context length L.
    pub context_len: usize,
    /// Largest horizon H.
    pub horizon: usize,
    /// Feed-forward width as a multiple of d_model.
    pub ffn_mult: usize,
    /// Intent and location vocabulary sizes, excluding the UNK row.
    pub n_intents: usize,
    pub n_locations: usize,
    pub seed: u64,
    pub fuse_kg: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Standard deviation of the random embedding init.
    pub init_std: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            d_model: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 1,
            context_len: 32,
            horizon: 4,
            ffn_mult: 4,
            n_intents: 0,
            n_locations: 0,
            seed: 0,
            fuse_kg: false,
            epochs: 10,
            batch_size: 64,
            learning_rate: 3e-3,
            init_std: 0.1,
        }
    }
}

impl PredictorConfig {
    pub fn check(&self) -> Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::Config(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.context_len == 0 || self.horizon == 0 {
            return bad("context_len and horizon must be at least 1");
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 || self.ffn_mult == 0 {
            return bad("layer counts and ffn_mult must be at least 1");
        }
        if self.n_intents == 0 || self.n_locations == 0 {
            return bad("vocabularies must be non-empty");
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return bad("batch_size and learning_rate must be positive");
        }
        Ok(())
    }

    /// Decoder tokens taken from the end of the context.
    pub fn label_len(&self) -> usize {
        (self.context_len / 2).max(1)
    }
}

/// Intent and location labels. Model index i + 1 is label i; index 0 is UNK.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorVocab {
    pub intents: Vec<String>,
    pub locations: Vec<String>,
}

impl PredictorVocab {
    pub fn new(intents: Vec<String>, locations: Vec<String>) -> Self {
        PredictorVocab {
            intents: intents.iter().map(|l| canonicalize(l)).collect(),
            locations,
        }
    }

    pub fn intent_id(&self, label: &str) -> Option<usize> {
        let c = canonicalize(label);
        self.intents.iter().position(|l| *l == c).map(|i| i + 1)
    }

    pub fn location_id(&self, loc: &str) -> Option<usize> {
        self.locations.iter().position(|l| l == loc).map(|i| i + 1)
    }
}

/// One encoded position: vocabulary ids plus calendar fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Token {
    pub intent: usize,
    pub loc: usize,
    pub time: GlobalTime,
}

impl Token {
    const PAD: Token = Token {
        intent: 0,
        loc: 0,
        time: GlobalTime {
            minute: 0,
            hour: 0,
            weekday: 0,
            month: 1,
        },
    };
}

/// A prediction (or training) case: the context and the future slots.
#[derive(Debug, Clone)]
pub(crate) struct Case {
    pub context: Vec<Token>,
    /// Future slots; the intent field is the target (0 = no target).
    pub future: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub config: PredictorConfig,
    pub vocab: PredictorVocab,
    /// Named weight matrices in layout order.
    pub params: Vec<(String, Array2<f64>)>,
}

/// Names and shapes of every parameter for a config.
pub(crate) fn layout(c: &PredictorConfig) -> Vec<(String, (usize, usize))> {
    let d = c.d_model;
    let f = d * c.ffn_mult;
    let mut out: Vec<(String, (usize, usize))> = vec![
        ("emb.intent".into(), (c.n_intents + 1, d)),
        ("emb.loc".into(), (c.n_locations + 1, d)),
        ("emb.minute".into(), (60, d)),
        ("emb.hour".into(), (24, d)),
        ("emb.weekday".into(), (7, d)),
        ("emb.month".into(), (12, d)),
    ];

    let ffn = |p: &str, out: &mut Vec<(String, (usize, usize))>| {
        out.push((format!("{p}.ffn.w1"), (d, f)));
        out.push((format!("{p}.ffn.b1"), (1, f)));
        out.push((format!("{p}.ffn.w2"), (f, d)));
        out.push((format!("{p}.ffn.b2"), (1, d)));
    };
    let attn = |p: &str, out: &mut Vec<(String, (usize, usize))>| {
        for w in ["wq", "wk", "wv", "wo"] {
            out.push((format!("{p}.{w}"), (d, d)));
        }
    };
    let ln = |p: &str, out: &mut Vec<(String, (usize, usize))>| {
        out.push((format!("{p}.g"), (1, d)));
        out.push((format!("{p}.b"), (1, d)));
    };
    for l in 0..c.encoder_layers {
        let p = format!("enc{l}");
        ln(&format!("{p}.ln1"), &mut out);
        attn(&format!("{p}.self"), &mut out);
        ln(&format!("{p}.ln2"), &mut out);
        ffn(&p, &mut out);
    }
    ln("enc.ln", &mut out);
    for l in 0..c.decoder_layers {
        let p = format!("dec{l}");
        ln(&format!("{p}.ln1"), &mut out);
        attn(&format!("{p}.self"), &mut out);
        ln(&format!("{p}.ln2"), &mut out);
        attn(&format!("{p}.cross"), &mut out);
        ln(&format!("{p}.ln3"), &mut out);
        ffn(&p, &mut out);
    }
    ln("dec.ln", &mut out);
    out.push(("out.bias".into(), (1, c.n_intents)));
    out
}

pub(crate) fn sinusoid(len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d), |(p, i)| {
        let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
        if i % 2 == 0 {
            (p as f64 * rate).sin()
        } else {
            (p as f64 * rate).cos()
        }
    })
}

fn token_ids(tokens: &[Token]) -> [Vec<usize>; 6] {
    [
        tokens.iter().map(|t| t.intent).collect(),
        tokens.iter().map(|t| t.loc).collect(),
        tokens.iter().map(|t| t.time.minute as usize).collect(),
        tokens.iter().map(|t| t.time.hour as usize).collect(),
        tokens.iter().map(|t| t.time.weekday as usize).collect(),
        tokens.iter().map(|t| t.time.month as usize - 1).collect(),
    ]
}

/// Stacked batch inputs; encoder rows are left-padded to `context_len`,
/// decoder rows hold `label_len` known tokens then the future slots.
pub(crate) struct Batch {
    pub size: usize,
    pub enc: Vec<Token>,
    pub enc_valid: Rc<Vec<bool>>,
    pub dec: Vec<Token>,
    pub dec_valid: Rc<Vec<bool>>,
    /// 1 for known decoder tokens, 0 for padding and future slots.
    pub dec_intent_scale: Rc<Vec<f64>>,
    /// Decoder rows of the future slots.
    pub future_rows: Rc<Vec<usize>>,
    /// Output class (intent id - 1) per future slot.
    pub targets: Rc<Vec<Option<usize>>>,
    pub horizon: usize,
}

impl Batch {
    pub fn new(config: &PredictorConfig, cases: &[&Case]) -> Batch {
        let l = config.context_len;
        let ld = config.label_len();
        let h = cases.first().map_or(1, |c| c.future.len());
        let mut b = Batch {
            size: cases.len(),
            enc: Vec::with_capacity(cases.len() * l),
            enc_valid: Rc::default(),
            dec: Vec::with_capacity(cases.len() * (ld + h)),
            dec_valid: Rc::default(),
            dec_intent_scale: Rc::default(),
            future_rows: Rc::default(),
            targets: Rc::default(),
            horizon: h,
        };
        let (mut ev, mut dv, mut ds, mut fr, mut tg) = (vec![], vec![], vec![], vec![], vec![]);
        for (k, case) in cases.iter().enumerate() {
            debug_assert_eq!(case.future.len(), h, "a batch shares one horizon");
            let ctx = &case.context[case.context.len().saturating_sub(l)..];
            for i in 0..l {
                let valid = i >= l - ctx.len();
                b.enc.push(if valid { ctx[i - (l - ctx.len())] } else { Token::PAD });
                ev.push(valid);
            }
            let known = &ctx[ctx.len().saturating_sub(ld)..];
            for i in 0..ld {
                let valid = i >= ld - known.len();
                b.dec.push(if valid { known[i - (ld - known.len())] } else { Token::PAD });
                dv.push(valid);
                ds.push(if valid { 1.0 } else { 0.0 });
            }
            for (j, slot) in case.future.iter().enumerate() {
                fr.push(k * (ld + h) + ld + j);
                b.dec.push(*slot);
                dv.push(true);
                ds.push(0.0);
                tg.push(slot.intent.checked_sub(1));
            }
        }
        b.enc_valid = Rc::new(ev);
        b.dec_valid = Rc::new(dv);
        b.dec_intent_scale = Rc::new(ds);
        b.future_rows = Rc::new(fr);
        b.targets = Rc::new(tg);
        b
    }
}

pub(crate) struct Forward {
    pub logits: Var,
    pub params: Vec<Var>,
    /// Attention nodes, for inspection.
    pub attention: Vec<Var>,
}

fn uniform(rng: &mut util::Rng, shape: (usize, usize), a: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.gen_range(-a..a))
}

impl PredictorModel {
    /// Random init: embeddings with std `init_std`, Glorot-uniform
    /// projections, unit LayerNorm gains, zero biases.
    pub fn init(config: &PredictorConfig, vocab: PredictorVocab) -> Result<Self, PredictorError> {
        config.check()?;
        Self::check_vocab(config, &vocab)?;
        let mut rng = util::rng(config.seed, 301);
        let emb = config.init_std * 3f64.sqrt();
        let params = layout(config)
            .into_iter()
            .map(|(name, shape)| {
                let v = if name.starts_with("emb.") {
                    uniform(&mut rng, shape, emb)
                } else if name.ends_with(".g") {
                    Array2::ones(shape)
                } else if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") || name == "out.bias" {
                    Array2::zeros(shape)
                } else {
                    uniform(&mut rng, shape, (6.0 / (shape.0 + shape.1) as f64).sqrt())
                };
                (name, v)
            })
            .collect();
        Ok(PredictorModel {
            config: config.clone(),
            vocab,
            params,
        })
    }

    /// Every parameter zero, including LayerNorm gains: outputs are exactly
    /// uniform.
    pub fn zeros(config: &PredictorConfig, vocab: PredictorVocab) -> Result<Self, PredictorError> {
        config.check()?;
        Self::check_vocab(config, &vocab)?;
        Ok(PredictorModel {
            config: config.clone(),
            vocab,
            params: layout(config)
                .into_iter()
                .map(|(n, s)| (n, Array2::zeros(s)))
                .collect(),
        })
    }

    fn check_vocab(config: &PredictorConfig, vocab: &PredictorVocab) -> Result<(), PredictorError> {
        if vocab.intents.len() != config.n_intents || vocab.locations.len() != config.n_locations {
            return Err(PredictorError::VocabMismatch(format!(
                "config expects {} intents and {} locations, vocabulary has {} and {}",
                config.n_intents,
                config.n_locations,
                vocab.intents.len(),
                vocab.locations.len()
            )));
        }
        Ok(())
    }

    pub fn param(&self, name: &str) -> &Array2<f64> {
        &self.params.iter().find(|(n, _)| n == name).expect("parameter in layout").1
    }

    pub(crate) fn param_mut(&mut self, name: &str) -> &mut Array2<f64> {
        &mut self.params.iter_mut().find(|(n, _)| n == name).expect("parameter in layout").1
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|(_, p)| p.iter().all(|x| x.is_finite()))
    }

    /// Sum of the intent, location and four calendar embeddings of one
    /// event, addressed by model ids.
    pub fn encode_event(&self, intent: usize, loc: usize, ts: u64) -> Result<Vec<f64>, PredictorError> {
        if intent > self.config.n_intents {
            return Err(PredictorError::OutOfVocabulary(format!("intent id {intent}")));
        }
        if loc > self.config.n_locations {
            return Err(PredictorError::OutOfVocabulary(format!("location id {loc}")));
        }
        let t = GlobalTime::from_epoch(ts);
        let rows = [
            ("emb.intent", intent),
            ("emb.loc", loc),
            ("emb.minute", t.minute as usize),
            ("emb.hour", t.hour as usize),
            ("emb.weekday", t.weekday as usize),
            ("emb.month", t.month as usize - 1),
        ];
        let mut v = vec![0.0; self.config.d_model];
        for (name, r) in rows {
            v.iter_mut().zip(self.param(name).row(r)).for_each(|(a, b)| *a += b);
        }
        Ok(v)
    }

    pub(crate) fn token(&self, e: &UserEvent) -> Token {
        Token {
            intent: e.intent.as_deref().and_then(|l| self.vocab.intent_id(l)).unwrap_or(0),
            loc: self.vocab.location_id(&e.loc).unwrap_or(0),
            time: GlobalTime::from_epoch(e.ts),
        }
    }

    /// Builds the computation for a batch on `tape`. Logits have one row per
    /// future slot and one column per intent.
    pub(crate) fn forward(&self, tape: &mut Tape, batch: &Batch) -> Forward {
        let c = &self.config;
        let d = c.d_model;
        let params: Vec<Var> = self.params.iter().map(|(_, v)| tape.leaf(v.clone())).collect();
        let index: BTreeMap<&str, Var> = self.params.iter().map(|(n, _)| n.as_str()).zip(params.iter().copied()).collect();
        let p = |name: &str| index[name];
        let mut attention = Vec::new();

        let embed = |tape: &mut Tape, tokens: &[Token], intent_scale: Option<&Rc<Vec<f64>>>, per: usize| {
            let ids = token_ids(tokens);
            let names = ["emb.intent", "emb.loc", "emb.minute", "emb.hour", "emb.weekday", "emb.month"];
            let mut acc: Option<Var> = None;
            for (k, (name, idx)) in names.iter().zip(ids).enumerate() {
                let mut e = tape.gather(p(name), Rc::new(idx));
                if k == 0 {
                    if let Some(s) = intent_scale {
                        e = tape.scale_rows(e, s.clone());
                    }
                }
                acc = Some(match acc {
                    None => e,
                    Some(a) => tape.add(a, e),
                });
            }
            let pos = sinusoid(per, d);
            let pos = ndarray::concatenate(Axis(0), &vec![pos.view(); tokens.len() / per]).expect("same width");
            let pos = tape.leaf(pos);
            tape.add(acc.expect("six tables"), pos)
        };

        let attend = |tape: &mut Tape, pre: &str, xq: Var, xkv: Var, spec: AttnSpec, attention: &mut Vec<Var>| {
            let q = tape.matmul(xq, p(&format!("{pre}.wq")));
            let k = tape.matmul(xkv, p(&format!("{pre}.wk")));
            let v = tape.matmul(xkv, p(&format!("{pre}.wv")));
            let o = tape.attention(q, k, v, spec);
            attention.push(o);
            tape.matmul(o, p(&format!("{pre}.wo")))
        };
        let norm = |tape: &mut Tape, pre: &str, x: Var| tape.layer_norm(x, p(&format!("{pre}.g")), p(&format!("{pre}.b")));
        let ffn = |tape: &mut Tape, pre: &str, x: Var| {
            let h = tape.matmul(x, p(&format!("{pre}.ffn.w1")));
            let h = tape.add_row(h, p(&format!("{pre}.ffn.b1")));
            let h = tape.gelu(h);
            let h = tape.matmul(h, p(&format!("{pre}.ffn.w2")));
            tape.add_row(h, p(&format!("{pre}.ffn.b2")))
        };

        let l = c.context_len;
        let td = c.label_len() + batch.horizon;
        let mut x = embed(tape, &batch.enc, None, l);
        let enc_spec = AttnSpec {
            batch: batch.size,
            tq: l,
            tk: l,
            heads: c.heads,
            key_valid: batch.enc_valid.clone(),
            causal: false,
        };
        for layer in 0..c.encoder_layers {
            let pre = format!("enc{layer}");
            let h = norm(tape, &format!("{pre}.ln1"), x);
            let a = attend(tape, &format!("{pre}.self"), h, h, enc_spec.clone(), &mut attention);
            x = tape.add(x, a);
            let h = norm(tape, &format!("{pre}.ln2"), x);
            let f = ffn(tape, &pre, h);
            x = tape.add(x, f);
        }
        let memory = norm(tape, "enc.ln", x);

        let mut y = embed(tape, &batch.dec, Some(&batch.dec_intent_scale), td);
        let self_spec = AttnSpec {
            batch: batch.size,
            tq: td,
            tk: td,
            heads: c.heads,
            key_valid: batch.dec_valid.clone(),
            causal: true,
        };
        let cross_spec = AttnSpec {
            batch: batch.size,
            tq: td,
            tk: l,
            heads: c.heads,
            key_valid: batch.enc_valid.clone(),
            causal: false,
        };
        for layer in 0..c.decoder_layers {
            let pre = format!("dec{layer}");
            let h = norm(tape, &format!("{pre}.ln1"), y);
            let a = attend(tape, &format!("{pre}.self"), h, h, self_spec.clone(), &mut attention);
            y = tape.add(y, a);
            let h = norm(tape, &format!("{pre}.ln2"), y);
            let a = attend(tape, &format!("{pre}.cross"), h, memory, cross_spec.clone(), &mut attention);
            y = tape.add(y, a);
            let h = norm(tape, &format!("{pre}.ln3"), y);
            let f = ffn(tape, &pre, h);
            y = tape.add(y, f);
        }
        let y = norm(tape, "dec.ln", y);
        let z = tape.select_rows(y, batch.future_rows.clone());
        // output weights are tied to the intent embedding rows (UNK excluded)
        let out_rows = tape.select_rows(p("emb.intent"), Rc::new((1..=c.n_intents).collect()));
        let logits = tape.matmul_t(z, out_rows);
        let logits = tape.add_row(logits, p("out.bias"));
        Forward {
            logits,
            params,
            attention,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize, m: usize) -> PredictorVocab {
        PredictorVocab::new(
            (0..n).map(|i| format!("intent {i}")).collect(),
            (0..m).map(|i| format!("c{i}")).collect(),
        )
    }

    fn small() -> PredictorConfig {
        PredictorConfig {
            d_model: 8,
            heads: 2,
            context_len: 4,
            horizon: 2,
            n_intents: 5,
            n_locations: 3,
            ..Default::default()
        }
    }

    #[test]
    fn encode_event_is_additive() {
        let m = PredictorModel::init(&small(), vocab(5, 3)).unwrap();
        let ts = 1_677_943_800;
        let a = m.encode_event(2, 1, ts).unwrap();
        let b = m.encode_event(2, 3, ts).unwrap();
        let loc = m.param("emb.loc");
        for k in 0..8 {
            let expected = loc[[3, k]] - loc[[1, k]];
            assert!((b[k] - a[k] - expected).abs() < 1e-12);
        }
        assert!(matches!(m.encode_event(6, 1, ts), Err(PredictorError::OutOfVocabulary(_))));
        assert!(matches!(m.encode_event(1, 4, ts), Err(PredictorError::OutOfVocabulary(_))));
        let z = PredictorModel::zeros(&small(), vocab(5, 3)).unwrap();
        assert!(z.encode_event(3, 2, ts).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn vocabulary_sizes_must_match() {
        assert!(matches!(
            PredictorModel::init(&small(), vocab(4, 3)),
            Err(PredictorError::VocabMismatch(_))
        ));
    }

    #[test]
    fn config_checks() {
        let c = PredictorConfig {
            heads: 3,
            ..small()
        };
        assert!(c.check().is_err());
        assert_eq!(small().label_len(), 2);
    }
}

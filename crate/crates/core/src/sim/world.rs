use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::text::{function_cues, product_cues, NOISE, QUERY_NOISE};
use super::SimError;
use crate::graph::canonicalize;
use crate::mining::Lexicon;
use crate::repr::{Item, ItemKind};
use crate::util::{self, GlobalTime};

/// Monday 2023-03-06 00:00:00 UTC.
pub const DEFAULT_START: u64 = 1_678_060_800;

const NAMED: &[(&str, &str, &str)] = &[
    ("take an internet taxi", "take", "internet taxi"),
    ("buy movie tickets", "buy", "movie ticket"),
    ("buy snacks", "buy", "snack"),
    ("order coffee", "order", "coffee"),
    ("buy coffee beans", "buy", "coffee bean"),
    ("buy a house", "buy", "house"),
    ("renovate a house", "renovate", "house"),
    ("rent a mobile phone", "rent", "mobile phone"),
    ("buy a mobile phone", "buy", "mobile phone"),
    ("pay electricity bill", "pay", "electricity bill"),
    ("book a hotel room", "book", "hotel room"),
    ("buy train tickets", "buy", "train ticket"),
    ("order takeout", "order", "takeout"),
    ("recharge phone credit", "recharge", "phone credit"),
    ("rent a bike", "rent", "bike"),
    ("buy medicine", "buy", "medicine"),
    ("buy flowers", "buy", "flower"),
    ("book a restaurant", "book", "restaurant"),
    ("repair a car", "repair", "car"),
    ("buy an iphone13", "buy", "iphone13"),
];

const FIXED_EDGES: &[(&str, &str)] = &[
    ("take an internet taxi", "buy movie tickets"),
    ("buy movie tickets", "buy snacks"),
    ("buy a house", "renovate a house"),
    ("buy a mobile phone", "recharge phone credit"),
    ("book a hotel room", "book a restaurant"),
];

const PEAK_HOURS: &[(&str, u32)] = &[
    ("order coffee", 8),
    ("order takeout", 12),
    ("take an internet taxi", 18),
    ("buy movie tickets", 19),
    ("book a restaurant", 18),
    ("book a hotel room", 21),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_intents: usize,
    pub n_edges: usize,
    /// Planted conditional probabilities are at least `lift` times the
    /// target's base rate.
    pub lift: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Probability that a triggered intent arrives two steps later instead
    /// of one.
    pub delay2_prob: f64,
    /// Probability of starting a new session when nothing is pending.
    pub new_session_prob: f64,
    pub n_locations: usize,
    pub items_min: usize,
    pub items_max: usize,
    /// Fraction of items that also express a second intent.
    pub multi_label_rate: f64,
    pub zipf: f64,
    pub start: u64,
    pub allow_independent: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_intents: 20,
            n_edges: 10,
            lift: 3.0,
            p_min: 0.6,
            p_max: 0.95,
            delay2_prob: 0.2,
            new_session_prob: 0.3,
            n_locations: 8,
            items_min: 6,
            items_max: 8,
            multi_label_rate: 0.15,
            zipf: 0.8,
            start: DEFAULT_START,
            allow_independent: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldIntent {
    pub label: String,
    pub function: String,
    pub product: String,
    /// Share of base draws before time and location modulation.
    pub popularity: f64,
    /// Multipliers with mean 1.
    pub hour: Vec<f64>,
    pub weekday: Vec<f64>,
    pub location: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEdge {
    pub src: usize,
    pub dst: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldItem {
    pub item: Item,
    pub intents: Vec<usize>,
    /// Relative weight when an event of one of `intents` picks an item.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub seed: u64,
    pub intents: Vec<WorldIntent>,
    pub edges: Vec<PlantedEdge>,
    pub items: Vec<WorldItem>,
    pub lexicon: Lexicon,
}

fn mean_one(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x /= m);
}

fn article(product: &str) -> &'static str {
    match product.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Generate a world: intents with popularity and time/location modulation,
/// planted Consequent edges, and an item catalog.
///
/// Planted edges form vertex-disjoint chains (in- and out-degree at most
/// one, no cycles).
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<SyntheticWorld, SimError> {
    let bad = |m: String| Err(SimError::Config(m));
    if config.n_intents < 5 {
        return bad("a world needs at least 5 intents".into());
    }
    if config.n_edges == 0 && !config.allow_independent {
        return bad("zero planted edges requires allow_independent".into());
    }
    if config.n_edges >= config.n_intents {
        return bad("planted chains need n_edges < n_intents".into());
    }
    if config.n_locations < 2 || config.items_min == 0 || config.items_min > config.items_max {
        return bad("need at least 2 locations and 1 <= items_min <= items_max".into());
    }
    if !(0.0 < config.p_min && config.p_min <= config.p_max && config.p_max < 1.0) {
        return bad("need 0 < p_min <= p_max < 1".into());
    }
    let lexicon = Lexicon::bundled();
    let mut rng = util::rng(seed, 101);

    // intent vocabulary: named intents, then unused function x product pairs
    let mut defs: Vec<(String, String, String)> = NAMED
        .iter()
        .take(config.n_intents)
        .map(|(l, f, p)| (l.to_string(), f.to_string(), p.to_string()))
        .collect();
    if config.n_intents > defs.len() {
        let used: BTreeSet<(String, String)> = defs.iter().map(|d| (d.1.clone(), d.2.clone())).collect();
        let mut extra: Vec<(String, String)> = lexicon
            .functions
            .iter()
            .flat_map(|f| lexicon.products.keys().map(move |p| (f.clone(), p.clone())))
            .filter(|fp| !used.contains(fp) && !function_cues(&fp.0).is_empty() && !product_cues(&fp.1).is_empty())
            .collect();
        extra.shuffle(&mut rng);
        if extra.len() < config.n_intents - defs.len() {
            return bad(format!("lexicon supports at most {} intents", defs.len() + extra.len()));
        }
        for (f, p) in extra.into_iter().take(config.n_intents - defs.len()) {
            defs.push((format!("{f} {} {p}", article(&p)), f, p));
        }
    }

    let n = defs.len();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(&mut rng);
    let mut pop: Vec<f64> = ranks.iter().map(|&r| 1.0 / (r as f64 + 1.0).powf(config.zipf)).collect();
    let total: f64 = pop.iter().sum();
    pop.iter_mut().for_each(|p| *p /= total);

    let mut intents = Vec::with_capacity(n);
    for (k, (label, function, product)) in defs.into_iter().enumerate() {
        let peak = PEAK_HOURS
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, h)| *h as f64)
            .unwrap_or_else(|| rng.gen_range(0..24) as f64);
        let width = rng.gen_range(2.5..5.0);
        let mut hour: Vec<f64> = (0..24)
            .map(|h| {
                let d = (h as f64 - peak).abs();
                let d = d.min(24.0 - d);
                0.25 + (-d * d / (2.0 * width * width)).exp()
            })
            .collect();
        mean_one(&mut hour);
        let mut weekday: Vec<f64> = (0..7).map(|_| rng.gen_range(0.8..1.2)).collect();
        if label == "buy movie tickets" {
            weekday[5] *= 4.0;
            weekday[6] *= 4.0;
        }
        mean_one(&mut weekday);
        let mut location: Vec<f64> = (0..config.n_locations).map(|_| rng.gen_range(-0.8f64..0.8).exp()).collect();
        mean_one(&mut location);
        intents.push(WorldIntent {
            label,
            function,
            product,
            popularity: pop[k],
            hour,
            weekday,
            location,
        });
    }

    let index: BTreeMap<&str, usize> = intents.iter().enumerate().map(|(i, x)| (x.label.as_str(), i)).collect();
    let mut out_used = vec![false; n];
    let mut in_used = vec![false; n];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (a, b) in FIXED_EDGES {
        if pairs.len() == config.n_edges {
            break;
        }
        if let (Some(&a), Some(&b)) = (index.get(a), index.get(b)) {
            pairs.push((a, b));
            out_used[a] = true;
            in_used[b] = true;
        }
    }
    // chains stay acyclic if we never link a chain's tail back to its head
    let head_of = |pairs: &[(usize, usize)], mut v: usize| {
        while let Some(&(a, _)) = pairs.iter().find(|(_, b)| *b == v) {
            v = a;
        }
        v
    };
    let mut attempts = 0;
    while pairs.len() < config.n_edges {
        attempts += 1;
        if attempts > 10_000 {
            return bad("could not place the requested planted edges".into());
        }
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b || out_used[a] || in_used[b] || head_of(&pairs, a) == b {
            continue;
        }
        if config.lift * intents[b].popularity > config.p_max {
            continue;
        }
        pairs.push((a, b));
        out_used[a] = true;
        in_used[b] = true;
    }
    let mut edges = Vec::new();
    for (a, b) in pairs {
        let lo = (config.lift * intents[b].popularity).max(config.p_min);
        if lo > config.p_max {
            return Err(SimError::OverConstrained {
                src: intents[a].label.clone(),
                dst: intents[b].label.clone(),
                required: lo,
                max: config.p_max,
            });
        }
        edges.push(PlantedEdge {
            src: a,
            dst: b,
            p: rng.gen_range(lo..=config.p_max),
        });
    }

    let items = build_catalog(&intents, &edges, config, &mut rng);
    let world = SyntheticWorld {
        config: config.clone(),
        seed,
        intents,
        edges,
        items,
        lexicon,
    };
    world.audit()?;
    Ok(world)
}

const KINDS: [(ItemKind, &[&str]); 6] = [
    (ItemKind::Service, &["applet", "app"]),
    (ItemKind::Store, &["store", "shop"]),
    (ItemKind::Coupon, &["coupon", "voucher"]),
    (ItemKind::Bill, &["bill", "invoice"]),
    (ItemKind::Query, &["search", "query"]),
    (ItemKind::Review, &["review", "rating"]),
];

fn render(intent: &WorldIntent, rng: &mut util::Rng) -> Vec<String> {
    let mut words = vec![
        product_cues(&intent.product)
            .choose(rng)
            .copied()
            .unwrap_or(intent.product.as_str())
            .to_string(),
    ];
    if let Some(f) = function_cues(&intent.function).choose(rng) {
        words.push(f.to_string());
    }
    if rng.gen_bool(0.5) {
        words.push(intent.product.clone());
    }
    words
}

fn build_catalog(
    intents: &[WorldIntent],
    edges: &[PlantedEdge],
    config: &WorldConfig,
    rng: &mut util::Rng,
) -> Vec<WorldItem> {
    let mut items = Vec::new();
    for (i, intent) in intents.iter().enumerate() {
        let count = rng.gen_range(config.items_min..=config.items_max);
        for r in 0..count {
            let mut labels = vec![i];
            let mut words = render(intent, rng);
            if rng.gen_bool(config.multi_label_rate) {
                // prefer a consequent partner, as in a cinema snack combo
                let partner = edges
                    .iter()
                    .find(|e| e.src == i)
                    .map(|e| e.dst)
                    .filter(|_| rng.gen_bool(0.5))
                    .unwrap_or_else(|| rng.gen_range(0..intents.len()));
                if partner != i {
                    labels.push(partner);
                    words.extend(render(&intents[partner], rng));
                }
            }
            let (kind, nouns) = KINDS.choose(rng).expect("non-empty");
            words.push(nouns.choose(rng).expect("non-empty").to_string());
            if rng.gen_bool(0.4) {
                words.push(NOISE.choose(rng).expect("non-empty").to_string());
            }
            words.shuffle(rng);
            if intent.label == "order coffee" && r == 0 {
                words = vec!["starbucks".into(), "applet".into()];
                labels.truncate(1);
            }
            labels.sort_unstable();
            items.push(WorldItem {
                item: Item {
                    id: format!("it{:04}", items.len()),
                    kind: if r == 0 && intent.label == "order coffee" {
                        ItemKind::Service
                    } else {
                        *kind
                    },
                    text: words.join(" "),
                    image: None,
                },
                intents: labels,
                weight: 1.0 / (r as f64 + 1.0),
            });
        }
    }
    items
}

impl SyntheticWorld {
    pub fn n_intents(&self) -> usize {
        self.intents.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.intents.iter().map(|i| i.label.clone()).collect()
    }

    pub fn intent_index(&self, label: &str) -> Option<usize> {
        let c = canonicalize(label);
        self.intents.iter().position(|i| i.label == c)
    }

    pub fn locations(&self) -> Vec<String> {
        (0..self.config.n_locations).map(|l| format!("c{l}")).collect()
    }

    pub fn location_index(&self, loc: &str) -> Option<usize> {
        loc.strip_prefix('c')
            .and_then(|x| x.parse().ok())
            .filter(|&l: &usize| l < self.config.n_locations)
    }

    pub fn edge_from(&self, src: usize) -> Option<&PlantedEdge> {
        self.edges.iter().find(|e| e.src == src)
    }

    /// Base-draw distribution at a given time and location.
    pub fn base_distribution(&self, ts: u64, loc: usize) -> Vec<f64> {
        let t = GlobalTime::from_epoch(ts);
        let mut w: Vec<f64> = self
            .intents
            .iter()
            .map(|i| i.popularity * i.hour[t.hour as usize] * i.weekday[t.weekday as usize] * i.location[loc])
            .collect();
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= z);
        w
    }

    /// Items expressing `intent` with their selection weights.
    pub fn items_of(&self, intent: usize) -> Vec<(usize, f64)> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.intents.contains(&intent))
            .map(|(k, it)| (k, it.weight))
            .collect()
    }

    /// Labelled items with their true intent labels, for matcher training.
    pub fn labeled_items(&self) -> Vec<(Item, Vec<String>)> {
        self.items
            .iter()
            .map(|it| {
                (
                    it.item.clone(),
                    it.intents.iter().map(|&i| self.intents[i].label.clone()).collect(),
                )
            })
            .collect()
    }

    /// Search-query corpus mentioning each intent roughly in proportion to
    /// its popularity.
    pub fn query_corpus(&self, size: usize, seed: u64) -> Vec<String> {
        let mut rng = util::rng(seed, 103);
        let mut out = Vec::with_capacity(size);
        for (k, intent) in self.intents.iter().enumerate() {
            let count = ((intent.popularity * size as f64).round() as usize).max(3);
            for j in 0..count {
                let mut q = intent.label.clone();
                if j % 3 == 1 {
                    q = format!("{} {q}", QUERY_NOISE.choose(&mut rng).expect("non-empty"));
                } else if j % 3 == 2 {
                    q = format!("{q} {}", QUERY_NOISE.choose(&mut rng).expect("non-empty"));
                }
                out.push(q);
            }
            if k % 2 == 0 {
                out.push(format!("{} near me", intent.product));
            }
        }
        out.shuffle(&mut rng);
        out
    }

    /// Check every probability table and the planted-edge constraints.
    pub fn audit(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::Audit(m));
        let close = |x: f64, y: f64| (x - y).abs() < 1e-9;
        let pop: f64 = self.intents.iter().map(|i| i.popularity).sum();
        if !close(pop, 1.0) {
            return fail(format!("popularity sums to {pop}"));
        }
        for i in &self.intents {
            for (name, t) in [("hour", &i.hour), ("weekday", &i.weekday), ("location", &i.location)] {
                let m = t.iter().sum::<f64>() / t.len() as f64;
                if !close(m, 1.0) || t.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
                    return fail(format!("{name} table of {:?} is not a positive mean-one table", i.label));
                }
            }
        }
        let mut seen_src = BTreeSet::new();
        let mut seen_dst = BTreeSet::new();
        for e in &self.edges {
            if e.src == e.dst {
                return fail(format!("self loop on {}", self.intents[e.src].label));
            }
            if !seen_src.insert(e.src) || !seen_dst.insert(e.dst) {
                return fail("planted edges must have in- and out-degree at most one".into());
            }
            if !(e.p > 0.0 && e.p < 1.0) || e.p < self.config.lift * self.intents[e.dst].popularity {
                return fail(format!("edge probability {} violates the lift constraint", e.p));
            }
        }
        for i in 0..self.intents.len() {
            if self.items_of(i).is_empty() {
                return fail(format!("intent {:?} has no items", self.intents[i].label));
            }
        }
        Ok(())
    }
}

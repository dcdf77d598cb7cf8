use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::MiningError;
use crate::graph::canonicalize;

const BUNDLED: &str = include_str!("../../data/lexicon.json");

/// Function and product surface forms, product sememes, and stopwords.
///
/// `product_isa` is an optional list of `[child, parent]` product pairs used
/// to seed the product hierarchy when a graph is built from a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lexicon {
    pub functions: BTreeSet<String>,
    pub products: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub stopwords: BTreeSet<String>,
    #[serde(default)]
    pub product_isa: Vec<(String, String)>,
}

impl Lexicon {
    pub fn bundled() -> Lexicon {
        Lexicon::from_json(BUNDLED).expect("bundled lexicon is valid")
    }

    /// Parse and canonicalize every entry, then check that functions and
    /// products are disjoint.
    pub fn from_json(text: &str) -> Result<Lexicon, MiningError> {
        let raw: Lexicon = serde_json::from_str(text).map_err(|e| MiningError::Lexicon(e.to_string()))?;
        raw.canonical()
    }

    fn canonical(self) -> Result<Lexicon, MiningError> {
        let functions: BTreeSet<String> = self.functions.iter().map(|f| canonicalize(f)).collect();
        let products: BTreeMap<String, BTreeSet<String>> = self
            .products
            .iter()
            .map(|(p, s)| (canonicalize(p), s.iter().map(|x| canonicalize(x)).collect()))
            .collect();
        if functions.iter().chain(products.keys()).any(|s| s.is_empty()) {
            return Err(MiningError::Lexicon("empty surface form".into()));
        }
        if let Some(both) = functions.iter().find(|f| products.contains_key(*f)) {
            return Err(MiningError::Lexicon(format!("{both:?} is both a function and a product")));
        }
        for (c, p) in &self.product_isa {
            for x in [c, p] {
                if !products.contains_key(&canonicalize(x)) {
                    return Err(MiningError::Lexicon(format!("product_isa names unknown product {x:?}")));
                }
            }
        }
        Ok(Lexicon {
            functions,
            products,
            stopwords: self.stopwords.iter().map(|s| canonicalize(s)).collect(),
            product_isa: self
                .product_isa
                .iter()
                .map(|(c, p)| (canonicalize(c), canonicalize(p)))
                .collect(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lexicon serializes")
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty() || self.products.is_empty()
    }

    /// Resolve a product phrase, falling back to the singular of its last
    /// word ("movie tickets" -> "movie ticket").
    pub fn product(&self, phrase: &str) -> Option<&str> {
        let c = canonicalize(phrase);
        if let Some((k, _)) = self.products.get_key_value(&c) {
            return Some(k);
        }
        let singular = c.strip_suffix("es").filter(|s| self.products.contains_key(*s))
            .or_else(|| c.strip_suffix('s'))?;
        self.products.get_key_value(singular).map(|(k, _)| k.as_str())
    }

    pub(crate) fn max_words(&self) -> (usize, usize) {
        let words = |s: &String| s.split(' ').count();
        (
            self.functions.iter().map(words).max().unwrap_or(1),
            self.products.keys().map(words).max().unwrap_or(1),
        )
    }
}

/// Sememes of a product by exact lookup after canonicalization.
pub fn assign_sememes(product: &str, lexicon: &Lexicon) -> BTreeSet<String> {
    lexicon
        .products
        .get(&canonicalize(product))
        .cloned()
        .unwrap_or_default()
}

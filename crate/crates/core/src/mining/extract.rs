use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Lexicon, MiningError};
use crate::graph::canonicalize;

/// A product must start within this many content tokens after its function,
/// i.e. at most `WINDOW - 1` tokens may sit in between.
pub const WINDOW: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentCandidate {
    pub function: String,
    pub product: String,
    /// Most frequent canonical surface phrase, ties broken lexicographically.
    pub surface: String,
    /// Document index and byte span of the first occurrence.
    pub doc: usize,
    pub span: (usize, usize),
    pub support: usize,
}

struct Token {
    text: String,
    start: usize,
    end: usize,
}

fn tokenize(doc: &str, lexicon: &Lexicon) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in doc.char_indices().chain(std::iter::once((doc.len(), ' '))) {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                let text = doc[s..i].to_lowercase();
                if !lexicon.stopwords.contains(&text) {
                    out.push(Token {
                        text,
                        start: s,
                        end: i,
                    });
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn phrase(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
}

/// Longest lexicon match starting at `at`: (tokens consumed, canonical form).
fn match_at<'l>(
    tokens: &[Token],
    at: usize,
    max: usize,
    lookup: impl Fn(&str) -> Option<&'l str>,
) -> Option<(usize, &'l str)> {
    (1..=max.min(tokens.len() - at))
        .rev()
        .find_map(|n| lookup(&phrase(&tokens[at..at + n])).map(|c| (n, c)))
}

/// Pair every lexicon function with the nearest following product whose
/// first token lies within [`WINDOW`] content tokens, then aggregate pairs
/// across the corpus.
///
/// Stopwords are skipped when matching and counting the window but are kept
/// in the reported surface form and span.
pub fn extract_intent_candidates(corpus: &[String], lexicon: &Lexicon) -> Result<Vec<IntentCandidate>, MiningError> {
    if lexicon.is_empty() {
        return Err(MiningError::Lexicon("lexicon has no functions or products".into()));
    }
    let (max_f, max_p) = lexicon.max_words();
    struct Agg {
        doc: usize,
        span: (usize, usize),
        support: usize,
        surfaces: BTreeMap<String, usize>,
    }
    let mut agg: BTreeMap<(String, String), Agg> = BTreeMap::new();
    for (d, doc) in corpus.iter().enumerate() {
        let tokens = tokenize(doc, lexicon);
        // role per token position: Some((len, canonical, is_function))
        let mut roles = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let f = match_at(&tokens, i, max_f, |s| lexicon.functions.get(s).map(String::as_str));
            let p = match_at(&tokens, i, max_p, |s| lexicon.product(s));
            let pick = match (f, p) {
                (Some(f), Some(p)) if p.0 > f.0 => Some((p.0, p.1, false)),
                (Some(f), _) => Some((f.0, f.1, true)),
                (None, Some(p)) => Some((p.0, p.1, false)),
                (None, None) => None,
            };
            match pick {
                Some((n, c, is_f)) => {
                    roles.push((i, n, c, is_f));
                    i += n;
                }
                None => i += 1,
            }
        }
        for (k, &(fi, fnum, fname, is_f)) in roles.iter().enumerate() {
            if !is_f {
                continue;
            }
            let func_end = fi + fnum;
            let Some(&(pi, pnum, pname, _)) = roles[k + 1..].iter().find(|r| !r.3) else {
                continue;
            };
            if pi - func_end >= WINDOW {
                continue;
            }
            let span = (tokens[fi].start, tokens[pi + pnum - 1].end);
            let surface = canonicalize(&doc[span.0..span.1]);
            let e = agg.entry((fname.to_string(), pname.to_string())).or_insert(Agg {
                doc: d,
                span,
                support: 0,
                surfaces: BTreeMap::new(),
            });
            e.support += 1;
            *e.surfaces.entry(surface).or_default() += 1;
        }
    }
    let mut out: Vec<IntentCandidate> = agg
        .into_iter()
        .map(|((function, product), a)| {
            let surface = a
                .surfaces
                .iter()
                .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(x.0)))
                .map(|(s, _)| s.clone())
                .expect("at least one surface");
            IntentCandidate {
                function,
                product,
                surface,
                doc: a.doc,
                span: a.span,
                support: a.support,
            }
        })
        .collect();
    out.sort_by(|a, b| b.support.cmp(&a.support).then_with(|| a.surface.cmp(&b.surface)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn lex() -> Lexicon {
        Lexicon::bundled()
    }

    #[test]
    fn single_match() {
        let c = extract_intent_candidates(&["buy movie ticket at cinema".into()], &lex()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].function.as_str(), c[0].product.as_str(), c[0].support), ("buy", "movie ticket", 1));
        assert_eq!(c[0].span, (0, 16));
    }

    #[test]
    fn product_before_function_is_ignored() {
        assert!(extract_intent_candidates(&["movie ticket buy".into()], &lex()).unwrap().is_empty());
    }

    #[test]
    fn empty_corpus() {
        assert!(extract_intent_candidates(&[], &lex()).unwrap().is_empty());
    }

    #[test]
    fn window_and_surface() {
        let docs = vec![
            "Buy a House today".to_string(),
            "I want to buy a house".to_string(),
            "buy one big shiny old house".to_string(),
            "buy one big shiny old red house".to_string(),
        ];
        let c = extract_intent_candidates(&docs, &lex()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].support, 2);
        assert_eq!(c[0].surface, "buy a house");
        assert_eq!(c[0].doc, 0);
    }

    #[test]
    fn plural_and_longest_match() {
        let c = extract_intent_candidates(&["buy coffee beans".into(), "take an internet taxi".into()], &lex()).unwrap();
        let pairs: Vec<_> = c.iter().map(|c| (c.function.as_str(), c.product.as_str())).collect();
        assert_eq!(pairs, vec![("buy", "coffee bean"), ("take", "internet taxi")]);
        assert_eq!(c[0].surface, "buy coffee beans");
    }

    #[test]
    fn planted_pairs_recovered_with_counts() {
        let mut rng = util::rng(17, 0);
        let planted = [
            ("buy", "flower"),
            ("order", "coffee"),
            ("rent", "bike"),
            ("pay", "electricity bill"),
            ("book", "hotel room"),
            ("repair", "car"),
            ("recharge", "phone credit"),
        ];
        let fillers = ["please", "quickly", "cheap", "now", "good", "nearby", "best"];
        let mut counts = [0usize; 7];
        let mut docs = Vec::new();
        for _ in 0..100 {
            let k = rng.gen_range(0..7);
            counts[k] += 1;
            let (f, p) = planted[k];
            let gap: Vec<&str> = (0..rng.gen_range(0..3)).map(|_| *fillers.choose(&mut rng).unwrap()).collect();
            docs.push(format!("{} {f} {} {p} {}", fillers.choose(&mut rng).unwrap(), gap.join(" "), fillers.choose(&mut rng).unwrap()));
        }
        let c = extract_intent_candidates(&docs, &lex()).unwrap();
        assert_eq!(c.len(), counts.iter().filter(|&&n| n > 0).count());
        for (k, (f, p)) in planted.iter().enumerate() {
            let found = c.iter().find(|c| c.function == *f && c.product == *p);
            assert_eq!(found.map(|c| c.support).unwrap_or(0), counts[k]);
        }
        assert!(c.windows(2).all(|w| w[0].support >= w[1].support));

        let mut shuffled = docs.clone();
        shuffled.shuffle(&mut rng);
        let c2 = extract_intent_candidates(&shuffled, &lex()).unwrap();
        let key = |v: &[IntentCandidate]| v.iter().map(|c| (c.surface.clone(), c.support)).collect::<Vec<_>>();
        assert_eq!(key(&c), key(&c2));
    }
}

use serde::{Deserialize, Serialize};

use crate::util::Fnv64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub dim: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub seed: u64,
    pub normalize: bool,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            dim: 64,
            ngram_min: 2,
            ngram_max: 4,
            seed: 0,
            normalize: true,
        }
    }
}

/// Deterministic stand-in for a pretrained sentence encoder: signed feature
/// hashing of character n-grams.
///
/// Text is lower-cased and reduced to alphanumeric tokens separated by
/// single spaces, then padded with one space on each side so that word
/// boundaries contribute their own n-grams.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    config: TextEncoderConfig,
}

impl TextEncoder {
    pub fn new(config: TextEncoderConfig) -> Self {
        assert!(config.dim >= 8, "encoder dim must be at least 8");
        assert!(
            config.ngram_min >= 1 && config.ngram_min <= config.ngram_max,
            "invalid n-gram range"
        );
        TextEncoder { config }
    }

    pub fn config(&self) -> &TextEncoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn normalize_text(text: &str) -> String {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.config.dim];
        let norm = Self::normalize_text(text);
        if norm.is_empty() {
            return out;
        }
        let chars: Vec<char> = format!(" {norm} ").chars().collect();
        let mut buf = [0u8; 4];
        for n in self.config.ngram_min..=self.config.ngram_max {
            if chars.len() < n {
                continue;
            }
            for window in chars.windows(n) {
                let mut h = Fnv64::with_seed(self.config.seed);
                h.write(&[n as u8]);
                for c in window {
                    h.write(c.encode_utf8(&mut buf).as_bytes());
                }
                let v = h.finish();
                let bucket = (v % self.config.dim as u64) as usize;
                let sign = if (v >> 63) == 0 { 1.0 } else { -1.0 };
                out[bucket] += sign;
            }
        }
        if self.config.normalize {
            let n: f64 = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                out.iter_mut().for_each(|x| *x /= n);
            }
        }
        out
    }
}

impl Default for TextEncoder {
    fn default() -> Self {
        TextEncoder::new(TextEncoderConfig::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::cosine;

    #[test]
    fn deterministic() {
        let enc = TextEncoder::default();
        for s in ["order coffee", "电影票", "", "a"] {
            let a = enc.encode(s);
            let b = enc.encode(s);
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn empty_is_zero() {
        let enc = TextEncoder::default();
        assert!(enc.encode("").iter().all(|&v| v == 0.0));
        assert!(enc.encode("  -- ").iter().all(|&v| v == 0.0));
    }

    #[test]
    fn typo_closer_than_unrelated() {
        let enc = TextEncoder::default();
        let a = enc.encode("order coffee");
        let typo = enc.encode("order coffe");
        let other = enc.encode("pay rent");
        assert!(cosine(&a, &typo) > cosine(&a, &other));
    }

    #[test]
    fn normalized_when_configured() {
        let enc = TextEncoder::default();
        let v = enc.encode("buy movie tickets");
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        let raw = TextEncoder::new(TextEncoderConfig {
            normalize: false,
            ..Default::default()
        });
        let r = raw.encode("buy movie tickets");
        assert!(r.iter().all(|x| x.fract() == 0.0));
    }
}

//! Small shared helpers: a stable hash, seeded RNG construction and UTC
//! calendar fields.

use chrono::{DateTime, Datelike, Timelike};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
#[derive(Debug, Clone)]
pub struct Fnv64(u64);

impl Fnv64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Fnv64(Self::OFFSET)
    }

    pub fn with_seed(seed: u64) -> Self {
        let mut h = Self::new();
        h.write(&seed.to_le_bytes());
        h
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        // final avalanche so that low bits are usable as bucket indices
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

pub type Rng = ChaCha8Rng;

/// Deterministic RNG for a `(seed, stream)` pair, so independent consumers
/// of one seed do not share a sequence.
pub fn rng(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Calendar fields of an epoch timestamp in UTC. Weekday counts from
/// Monday = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GlobalTime {
    pub minute: u32,
    pub hour: u32,
    pub weekday: u32,
    pub month: u32,
}

impl GlobalTime {
    pub fn from_epoch(ts: u64) -> GlobalTime {
        let dt = DateTime::from_timestamp(ts as i64, 0).expect("timestamp in chrono range");
        GlobalTime {
            minute: dt.minute(),
            hour: dt.hour(),
            weekday: dt.weekday().num_days_from_monday(),
            month: dt.month(),
        }
    }
}

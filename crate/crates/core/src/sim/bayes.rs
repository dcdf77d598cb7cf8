use std::collections::BTreeMap;

use super::logs::SESSION_GAP;
use super::world::SyntheticWorld;
use super::SimError;
use crate::mining::UserEvent;

/// Pending triggered intents as (intent, steps until due), in queue order.
type Queue = Vec<(u16, u8)>;

/// Exact posterior over the next intent under the planted process.
///
/// Filters the hidden queue of pending triggered intents through the
/// observed history. The gap before each event reveals whether a new session
/// started, which is only possible with an empty queue.
pub struct BayesOracle<'w> {
    world: &'w SyntheticWorld,
}

impl<'w> BayesOracle<'w> {
    pub fn new(world: &'w SyntheticWorld) -> Self {
        BayesOracle { world }
    }

    fn index(&self, e: &UserEvent) -> Result<(usize, usize), SimError> {
        let intent = e
            .intent
            .as_deref()
            .and_then(|l| self.world.intent_index(l))
            .ok_or_else(|| SimError::UnknownIntent(e.intent.clone().unwrap_or_default()))?;
        let loc = self
            .world
            .location_index(&e.loc)
            .ok_or_else(|| SimError::UnknownLocation(e.loc.clone()))?;
        Ok((intent, loc))
    }

    fn condition_on_gap(&self, belief: &mut BTreeMap<Queue, f64>, long: bool) {
        let q = self.world.config.new_session_prob;
        for (queue, w) in belief.iter_mut() {
            *w *= match (queue.is_empty(), long) {
                (true, true) => q,
                (true, false) => 1.0 - q,
                (false, true) => 0.0,
                (false, false) => 1.0,
            };
        }
        belief.retain(|_, w| *w > 0.0);
    }

    fn normalize(belief: &mut BTreeMap<Queue, f64>) -> Result<(), SimError> {
        let z: f64 = belief.values().sum();
        if !(z > 0.0) {
            return Err(SimError::ImpossibleHistory);
        }
        belief.values_mut().for_each(|w| *w /= z);
        Ok(())
    }

    /// P(next intent) for an event at `ts`/`loc` following `context`, which
    /// must be the user's complete, time-sorted history.
    pub fn posterior(&self, context: &[UserEvent], ts: u64, loc: &str) -> Result<Vec<f64>, SimError> {
        let w = self.world;
        let delay2 = w.config.delay2_prob;
        let mut belief: BTreeMap<Queue, f64> = BTreeMap::from([(Vec::new(), 1.0)]);
        let mut prev_ts: Option<u64> = None;
        for e in context {
            let (x, l) = self.index(e)?;
            if let Some(p) = prev_ts {
                self.condition_on_gap(&mut belief, e.ts.saturating_sub(p) > SESSION_GAP);
            }
            prev_ts = Some(e.ts);
            let pi = w.base_distribution(e.ts, l);
            let edge = w.edge_from(x);
            let mut next: BTreeMap<Queue, f64> = BTreeMap::new();
            for (queue, weight) in belief {
                let (mut rest, like) = match queue.first() {
                    Some(&(front, 0)) => {
                        if front as usize != x {
                            continue;
                        }
                        (queue[1..].to_vec(), 1.0)
                    }
                    _ => (queue, pi[x]),
                };
                for slot in rest.iter_mut() {
                    slot.1 = slot.1.saturating_sub(1);
                }
                let weight = weight * like;
                match edge {
                    None => *next.entry(rest).or_default() += weight,
                    Some(edge) => {
                        *next.entry(rest.clone()).or_default() += weight * (1.0 - edge.p);
                        for (due, pd) in [(0u8, 1.0 - delay2), (1u8, delay2)] {
                            if pd == 0.0 {
                                continue;
                            }
                            let mut q = rest.clone();
                            let at = q.partition_point(|s| s.1 <= due);
                            q.insert(at, (edge.dst as u16, due));
                            *next.entry(q).or_default() += weight * edge.p * pd;
                        }
                    }
                }
            }
            belief = next;
            Self::normalize(&mut belief)?;
        }
        let loc_idx = w.location_index(loc).ok_or_else(|| SimError::UnknownLocation(loc.to_string()))?;
        if let Some(p) = prev_ts {
            self.condition_on_gap(&mut belief, ts.saturating_sub(p) > SESSION_GAP);
            Self::normalize(&mut belief)?;
        }
        let pi = w.base_distribution(ts, loc_idx);
        let mut out = vec![0.0; w.n_intents()];
        for (queue, weight) in &belief {
            match queue.first() {
                Some(&(front, 0)) => out[front as usize] += weight,
                _ => out.iter_mut().zip(&pi).for_each(|(o, p)| *o += weight * p),
            }
        }
        Ok(out)
    }
}

/// Expected Recall@1 of the Bayes-optimal predictor on the given prediction
/// points: the mean over points of the largest posterior probability.
pub fn bayes_rate(world: &SyntheticWorld, points: &[(Vec<UserEvent>, UserEvent)]) -> Result<f64, SimError> {
    if points.is_empty() {
        return Ok(0.0);
    }
    let oracle = BayesOracle::new(world);
    let mut total = 0.0;
    for (context, target) in points {
        let p = oracle.posterior(context, target.ts, &target.loc)?;
        total += p.iter().cloned().fold(0.0, f64::max);
    }
    Ok(total / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_logs, generate_world, WorldConfig};

    #[test]
    fn posterior_is_normalized_and_follows_certain_triggers() {
        let w = generate_world(&WorldConfig::default(), 11).unwrap();
        let logs = generate_logs(&w, 40, 12, 2);
        let oracle = BayesOracle::new(&w);
        for r in logs.users() {
            let ev = &logs.events[r.clone()];
            for k in 1..ev.len() {
                let p = oracle.posterior(&ev[..k], ev[k].ts, &ev[k].loc).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                // the realized intent is always possible
                assert!(p[logs.trace[r.start + k].intent] > 0.0);
            }
        }
    }

    #[test]
    fn empty_context_is_the_base_mix() {
        let w = generate_world(&WorldConfig::default(), 11).unwrap();
        let p = BayesOracle::new(&w).posterior(&[], w.config.start + 5000, "c2").unwrap();
        assert_eq!(p, w.base_distribution(w.config.start + 5000, 2));
    }
}

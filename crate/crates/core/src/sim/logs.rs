use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::world::SyntheticWorld;
use crate::mining::UserEvent;
use crate::util;

/// Gaps within a session are at most this long and gaps between sessions
/// are longer, so segmenting at this threshold recovers generator sessions.
pub const SESSION_GAP: u64 = 3600;
pub const SHORT_GAP: (u64, u64) = (60, 1200);
pub const LONG_GAP: (u64, u64) = (7200, 108_000);
const START_SPREAD: u64 = 28 * 86_400;

/// Ground truth behind one generated event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTrace {
    pub intent: usize,
    pub loc: usize,
    pub item: usize,
    /// Emitted by a planted edge rather than drawn from the base mix.
    pub triggered: bool,
    /// Session index within the user.
    pub session: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLogs {
    /// Sorted by (user, ts).
    pub events: Vec<UserEvent>,
    /// Parallel to `events`.
    pub trace: Vec<EventTrace>,
}

impl SimLogs {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Index ranges of each user's events.
    pub fn users(&self) -> Vec<std::ops::Range<usize>> {
        user_ranges(&self.events)
    }
}

/// Index ranges of each user's run of events in a user-sorted list.
pub fn user_ranges(events: &[UserEvent]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=events.len() {
        if i == events.len() || events[i].user != events[start].user {
            out.push(start..i);
            start = i;
        }
    }
    out
}

struct Pending {
    intent: usize,
    due: usize,
}

/// Sample event logs from the planted process.
///
/// Each step either emits the oldest due triggered intent or draws from the
/// base mix at the current hour, weekday and location. An emitted intent
/// with a planted out-edge schedules its consequent one step later (two with
/// probability `delay2_prob`). Sessions end only when nothing is pending;
/// then a long gap and a move to another location follow with probability
/// `new_session_prob`. Pending intents left at the end of a user's sequence
/// are dropped.
pub fn generate_logs(world: &SyntheticWorld, n_users: usize, events_per_user: usize, seed: u64) -> SimLogs {
    let cfg = &world.config;
    let n_loc = cfg.n_locations;
    let item_tables: Vec<(Vec<usize>, WeightedIndex<f64>)> = (0..world.n_intents())
        .map(|i| {
            let (ids, w): (Vec<usize>, Vec<f64>) = world.items_of(i).into_iter().unzip();
            (ids, WeightedIndex::new(w).expect("audited world has items for every intent"))
        })
        .collect();
    let mut events = Vec::with_capacity(n_users * events_per_user);
    let mut trace = Vec::with_capacity(n_users * events_per_user);
    for u in 0..n_users {
        // one stream per user keeps users independent of each other
        let mut rng = util::rng(seed, 0x5157_0000 + u as u64);
        let user = format!("u{u:04}");
        let mut ts = cfg.start + rng.gen_range(0..START_SPREAD);
        let mut loc = rng.gen_range(0..n_loc);
        let mut session = 0;
        let mut queue: Vec<Pending> = Vec::new();
        for step in 0..events_per_user {
            if step > 0 {
                if queue.is_empty() && rng.gen_bool(cfg.new_session_prob) {
                    ts += rng.gen_range(LONG_GAP.0..=LONG_GAP.1);
                    loc = (loc + rng.gen_range(1..n_loc)) % n_loc;
                    session += 1;
                } else {
                    ts += rng.gen_range(SHORT_GAP.0..=SHORT_GAP.1);
                }
            }
            let (intent, triggered) = if queue.first().is_some_and(|p| p.due <= step) {
                (queue.remove(0).intent, true)
            } else {
                let pi = world.base_distribution(ts, loc);
                let d = WeightedIndex::new(&pi).expect("normalized base distribution");
                (d.sample(&mut rng), false)
            };
            let (ids, dist) = &item_tables[intent];
            let item = ids[dist.sample(&mut rng)];
            if let Some(e) = world.edge_from(intent) {
                if rng.gen_bool(e.p) {
                    let due = step + if rng.gen_bool(cfg.delay2_prob) { 2 } else { 1 };
                    // stable insert keeps insertion order among equal dues
                    let at = queue.partition_point(|p| p.due <= due);
                    queue.insert(at, Pending { intent: e.dst, due });
                }
            }
            events.push(UserEvent {
                user: user.clone(),
                ts,
                loc: format!("c{loc}"),
                intent: Some(world.intents[intent].label.clone()),
                item: Some(world.items[item].item.id.clone()),
            });
            trace.push(EventTrace {
                intent,
                loc,
                item,
                triggered,
                session,
            });
        }
    }
    SimLogs { events, trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::segment_sessions;
    use crate::sim::{generate_world, WorldConfig};

    #[test]
    fn empty_and_reproducible() {
        let w = generate_world(&WorldConfig::default(), 3).unwrap();
        assert!(generate_logs(&w, 0, 10, 1).is_empty());
        let a = generate_logs(&w, 20, 15, 1);
        assert_eq!(a.len(), 300);
        assert_eq!(a, generate_logs(&w, 20, 15, 1));
        assert_ne!(a, generate_logs(&w, 20, 15, 2));
        assert_eq!(a.users().len(), 20);
    }

    #[test]
    fn segmentation_recovers_generator_sessions() {
        let w = generate_world(&WorldConfig::default(), 3).unwrap();
        let logs = generate_logs(&w, 50, 20, 4);
        let sessions = segment_sessions(&logs.events, SESSION_GAP, usize::MAX);
        let generated: usize = logs.users().iter().map(|r| logs.trace[r.end - 1].session + 1).sum();
        assert_eq!(sessions.len(), generated);
    }

    #[test]
    fn items_express_their_intent() {
        let w = generate_world(&WorldConfig::default(), 5).unwrap();
        let logs = generate_logs(&w, 30, 10, 6);
        for t in &logs.trace {
            assert!(w.items[t.item].intents.contains(&t.intent));
        }
    }
}

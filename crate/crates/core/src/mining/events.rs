use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::MiningError;

/// One logged interaction. `intent` is set once the event has been labelled;
/// before that only `item` is known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserEvent {
    pub user: String,
    pub ts: u64,
    pub loc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub user: String,
    /// Position of the session among the user's sessions.
    pub index: usize,
    pub events: Vec<UserEvent>,
}

impl Session {
    pub fn key(&self) -> (&str, usize) {
        (&self.user, self.index)
    }

    pub fn start(&self) -> u64 {
        self.events[0].ts
    }
}

/// Split each user's time-sorted events whenever the gap to the previous
/// event exceeds `gap` seconds or the session already holds `max_len`
/// events. Sessions come back ordered by (user, start time); events with
/// equal timestamps keep their input order.
pub fn segment_sessions(events: &[UserEvent], gap: u64, max_len: usize) -> Vec<Session> {
    assert!(gap > 0 && max_len > 0, "gap and max_len must be positive");
    let mut by_user: BTreeMap<&str, Vec<&UserEvent>> = BTreeMap::new();
    for e in events {
        by_user.entry(&e.user).or_default().push(e);
    }
    let mut out = Vec::new();
    for (user, mut evs) in by_user {
        evs.sort_by_key(|e| e.ts);
        let mut current: Vec<UserEvent> = Vec::new();
        let mut index = 0;
        for e in evs {
            let split = current
                .last()
                .is_some_and(|last| e.ts - last.ts > gap || current.len() >= max_len);
            if split {
                out.push(Session {
                    user: user.to_string(),
                    index,
                    events: std::mem::take(&mut current),
                });
                index += 1;
            }
            current.push(e.clone());
        }
        if !current.is_empty() {
            out.push(Session {
                user: user.to_string(),
                index,
                events: current,
            });
        }
    }
    out
}

pub fn write_events<W: Write>(events: &[UserEvent], mut out: W) -> Result<(), MiningError> {
    for e in events {
        serde_json::to_writer(&mut out, e).map_err(|err| MiningError::Parse {
            line: 0,
            message: err.to_string(),
        })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events<R: BufRead>(input: R) -> Result<Vec<UserEvent>, MiningError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: UserEvent = serde_json::from_str(&line).map_err(|err| MiningError::Parse {
            line: i + 1,
            message: err.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(user: &str, ts: u64, intent: &str) -> UserEvent {
        UserEvent {
            user: user.into(),
            ts,
            loc: "c0".into(),
            intent: Some(intent.into()),
            item: None,
        }
    }

    #[test]
    fn single_split() {
        let s = segment_sessions(&[ev("u", 5000, "c"), ev("u", 0, "a"), ev("u", 100, "b")], 1000, 50);
        let ts: Vec<Vec<u64>> = s.iter().map(|s| s.events.iter().map(|e| e.ts).collect()).collect();
        assert_eq!(ts, vec![vec![0, 100], vec![5000]]);
        assert_eq!(s[1].key(), ("u", 1));
    }

    #[test]
    fn empty_input() {
        assert!(segment_sessions(&[], 10, 10).is_empty());
    }

    #[test]
    fn max_len_caps_sessions() {
        let evs: Vec<_> = (0..7).map(|t| ev("u", t, "a")).collect();
        let s = segment_sessions(&evs, 100, 3);
        assert_eq!(s.iter().map(|s| s.events.len()).collect::<Vec<_>>(), vec![3, 3, 1]);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut evs = vec![ev("u1", 3, "buy snacks")];
        evs.push(UserEvent {
            user: "u2".into(),
            ts: 9,
            loc: "c4".into(),
            intent: None,
            item: Some("it7".into()),
        });
        let mut buf = Vec::new();
        write_events(&evs, &mut buf).unwrap();
        assert_eq!(read_events(buf.as_slice()).unwrap(), evs);
        let err = read_events("{\"user\":1}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, MiningError::Parse { line: 1, .. }));
    }
}

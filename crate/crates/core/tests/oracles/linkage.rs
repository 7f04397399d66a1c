//! Exhaustive-partition linkage oracle.
//!
//! Enumerates set partitions of one patient's events and keeps those that
//! satisfy the linkage rules stated declaratively. Pruning only cuts
//! branches that already break one of the stated rules, so every surviving
//! leaf is still checked in full.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, TimeZone, Utc};
use eoc_core::builder::LinkagePolicy;
use eoc_core::model::{make_event_id, Event, EventType, Money};
use rand::Rng;

pub fn random_patient(rng: &mut impl Rng, patient: &str, max_events: usize) -> Vec<Event> {
    let base = Utc.with_ymd_and_hms(2015, 3, 1, 0, 0, 0).unwrap();
    let n = rng.random_range(1..=max_events);
    let keys = ["", "K1", "K2", "K3"];
    let mut out: Vec<Event> = (0..n)
        .map(|i| {
            let t = match rng.random_range(0..10) {
                0..3 => EventType::Admission,
                3..5 => EventType::Discharge,
                5 => EventType::Transfer,
                6 => EventType::Death,
                7 => EventType::Procedure,
                8 => EventType::BillingCharge,
                _ => EventType::LabResult,
            };
            let key = keys[rng.random_range(0..keys.len())];
            let native = format!("{patient}-{i}");
            Event {
                event_id: make_event_id("oracle", &native).unwrap(),
                patient_id: patient.into(),
                encounter_id: (!key.is_empty()).then(|| key.to_string()),
                event_type: t,
                timestamp: base + Duration::hours(rng.random_range(0..480)),
                department: Some(["cardiology", "oncology"][rng.random_range(0..2)].into()),
                attributes: Default::default(),
                amount: t.is_financial().then(|| Money::from_cents(100)),
                source_id: "oracle".into(),
                source_native_key: native,
            }
        })
        .collect();
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    /// Index of the unit (keyed group or unkeyed admission).
    Unit(usize),
    /// Unkeyed non-admission event inside the span of the unit.
    Covered(usize),
    /// Position in the time-ordered list of uncovered unkeyed events.
    Loose(usize),
}

#[derive(Debug, Clone)]
pub struct Span {
    pub unit: usize,
    pub admission: DateTime<Utc>,
    pub discharge: Option<DateTime<Utc>>,
    lo: DateTime<Utc>,
    hi: Option<(DateTime<Utc>, bool)>,
}

impl Span {
    fn covers(&self, t: DateTime<Utc>) -> bool {
        t >= self.lo
            && match self.hi {
                None => true,
                Some((h, true)) => t <= h,
                Some((h, false)) => t < h,
            }
    }
}

pub struct Facts {
    roles: Vec<Role>,
    loose_ts: Vec<DateTime<Utc>>,
    pub spans: Vec<Span>,
    gap: Duration,
}

pub fn facts(events: &[Event], policy: &LinkagePolicy) -> Facts {
    let key = |e: &Event| e.encounter_id.clone().filter(|k| !k.is_empty());
    let mut unit_keys: Vec<Option<String>> = Vec::new();
    let mut unit_of = vec![None; events.len()];
    for (i, e) in events.iter().enumerate() {
        match key(e) {
            Some(k) => {
                let u = match unit_keys.iter().position(|x| x.as_deref() == Some(k.as_str())) {
                    Some(u) => u,
                    None => {
                        unit_keys.push(Some(k));
                        unit_keys.len() - 1
                    }
                };
                unit_of[i] = Some(u);
            }
            None if e.event_type == EventType::Admission => {
                unit_keys.push(None);
                unit_of[i] = Some(unit_keys.len() - 1);
            }
            None => {}
        }
    }
    // Anchors: units holding an admission, ordered by their first admission.
    let mut anchors: Vec<(usize, usize)> = Vec::new();
    for u in 0..unit_keys.len() {
        if let Some(first) = (0..events.len())
            .find(|&i| unit_of[i] == Some(u) && events[i].event_type == EventType::Admission)
        {
            anchors.push((first, u));
        }
    }
    anchors.sort();
    let grace = Duration::hours(policy.grace_window_hours as i64);
    let mut spans = Vec::new();
    for (j, &(first, u)) in anchors.iter().enumerate() {
        let adm = events[first].timestamp;
        let next = anchors.get(j + 1).map(|&(f, _)| events[f].timestamp);
        let d = if unit_keys[u].is_some() {
            (0..events.len())
                .filter(|&i| unit_of[i] == Some(u))
                .filter(|&i| events[i].event_type == EventType::Discharge && events[i].timestamp >= adm)
                .map(|i| events[i].timestamp)
                .max()
        } else {
            events
                .iter()
                .filter(|e| key(e).is_none() && e.event_type == EventType::Discharge)
                .map(|e| e.timestamp)
                .filter(|&t| t >= adm && next.is_none_or(|n| t < n))
                .min()
        };
        let (discharge, hi) = match (d, next) {
            (Some(d), Some(n)) if n <= d + grace => (Some(d), Some((n, false))),
            (Some(d), _) => (Some(d), Some((d + grace, true))),
            (None, Some(n)) => (Some(n), Some((n, false))),
            (None, None) => (None, None),
        };
        spans.push(Span {
            unit: u,
            admission: adm,
            discharge,
            lo: adm,
            hi,
        });
    }
    let mut roles = Vec::new();
    let mut loose_ts = Vec::new();
    for (i, e) in events.iter().enumerate() {
        roles.push(match unit_of[i] {
            Some(u) => Role::Unit(u),
            None => match spans.iter().find(|s| s.covers(e.timestamp)) {
                Some(s) => Role::Covered(s.unit),
                None => {
                    loose_ts.push(e.timestamp);
                    Role::Loose(loose_ts.len() - 1)
                }
            },
        });
    }
    Facts {
        roles,
        loose_ts,
        spans,
        gap: Duration::hours(policy.session_gap_hours as i64),
    }
}

fn unit_in(f: &Facts, block: &[usize]) -> Option<usize> {
    block.iter().find_map(|&i| match f.roles[i] {
        Role::Unit(u) => Some(u),
        _ => None,
    })
}

/// Whether a finished partition satisfies every rule.
fn valid(f: &Facts, blocks: &[Vec<usize>]) -> bool {
    for b in blocks {
        let units: BTreeSet<usize> = b
            .iter()
            .filter_map(|&i| match f.roles[i] {
                Role::Unit(u) => Some(u),
                _ => None,
            })
            .collect();
        if units.len() > 1 {
            return false;
        }
        let unit = units.first().copied();
        for &i in b {
            match f.roles[i] {
                Role::Covered(u) if unit != Some(u) => return false,
                Role::Loose(_) if unit.is_some() => return false,
                _ => {}
            }
        }
        let mut loose: Vec<usize> = b
            .iter()
            .filter_map(|&i| match f.roles[i] {
                Role::Loose(p) => Some(p),
                _ => None,
            })
            .collect();
        loose.sort();
        if loose.windows(2).any(|w| w[1] != w[0] + 1) {
            return false;
        }
        for w in loose.windows(2) {
            if f.loose_ts[w[1]] - f.loose_ts[w[0]] > f.gap {
                return false;
            }
        }
        if let (Some(&lo), Some(&hi)) = (loose.first(), loose.last()) {
            if lo > 0 && f.loose_ts[lo] - f.loose_ts[lo - 1] <= f.gap {
                return false;
            }
            if hi + 1 < f.loose_ts.len() && f.loose_ts[hi + 1] - f.loose_ts[hi] <= f.gap {
                return false;
            }
        }
    }
    // A unit split across blocks.
    let mut seen = BTreeSet::new();
    for b in blocks {
        if let Some(u) = unit_in(f, b) {
            if !seen.insert(u) {
                return false;
            }
        }
    }
    true
}

/// Rejects a partial assignment that already breaks a rule.
fn doomed(f: &Facts, blocks: &[Vec<usize>], b: usize, i: usize) -> bool {
    let block = &blocks[b];
    match f.roles[i] {
        Role::Unit(u) => {
            unit_in(f, block).is_some_and(|v| v != u)
                || blocks
                    .iter()
                    .enumerate()
                    .any(|(j, o)| j != b && unit_in(f, o) == Some(u))
        }
        Role::Loose(_) => unit_in(f, block).is_some(),
        Role::Covered(u) => unit_in(f, block).is_some_and(|v| v != u),
    }
}

fn search(f: &Facts, i: usize, n: usize, blocks: &mut Vec<Vec<usize>>, prune: bool, found: &mut Vec<Vec<Vec<usize>>>) {
    if i == n {
        if valid(f, blocks) {
            found.push(blocks.clone());
        }
        return;
    }
    for b in 0..blocks.len() {
        if prune && doomed(f, blocks, b, i) {
            continue;
        }
        blocks[b].push(i);
        search(f, i + 1, n, blocks, prune, found);
        blocks[b].pop();
    }
    blocks.push(vec![i]);
    if !(prune && doomed(f, blocks, blocks.len() - 1, i)) {
        search(f, i + 1, n, blocks, prune, found);
    }
    blocks.pop();
}

/// All partitions satisfying the rules, as sets of event ids.
pub fn valid_partitions(events: &[Event], policy: &LinkagePolicy, prune: bool) -> Vec<BTreeSet<BTreeSet<String>>> {
    let f = facts(events, policy);
    let mut found = Vec::new();
    search(&f, 0, events.len(), &mut Vec::new(), prune, &mut found);
    found
        .into_iter()
        .map(|blocks| {
            blocks
                .into_iter()
                .map(|b| b.into_iter().map(|i| events[i].event_id.clone()).collect())
                .collect()
        })
        .collect()
}

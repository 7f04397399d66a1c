//! Episode-of-care linkage.
//!
//! A patient's time-ordered events are partitioned into episodes by three
//! rules applied in order:
//!
//! 1. events sharing a non-empty `encounter_id` form one episode;
//! 2. an ADMISSION anchors an inpatient episode whose span runs to its
//!    discharge plus the grace window (capped at the next admission); unkeyed
//!    events inside a span join that episode;
//! 3. the remaining unkeyed events are chained into outpatient episodes,
//!    consecutive events at most `session_gap_hours` apart sharing one.
//!
//! A keyed anchor's discharge is its latest keyed DISCHARGE at or after the
//! admission. An unkeyed admission's discharge is the first unkeyed DISCHARGE
//! between it and the next admission. An anchor without a discharge is
//! implicitly closed by the next admission, or stays open when none follows.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::classify::CohortRegistry;
use crate::model::{derive_fields, make_episode_id, Derived, EpisodeOfCare, Event, EventType};
use crate::store::{EpisodeBatch, Repository, Snapshot, StoreError};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("linkage contract violated: {0}")]
    Contract(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkagePolicy {
    pub grace_window_hours: u32,
    pub session_gap_hours: u32,
}

impl Default for LinkagePolicy {
    fn default() -> Self {
        LinkagePolicy {
            grace_window_hours: 72,
            session_gap_hours: 24,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub episodes_written: usize,
    pub episodes_tombstoned: usize,
}

enum AnchorSource<'a> {
    Keyed(&'a str),
    Unkeyed,
}

struct Anchor<'a> {
    admission: DateTime<Utc>,
    admission_idx: usize,
    source: AnchorSource<'a>,
    discharge: Option<DateTime<Utc>>,
    /// Absorption span: `[admission, end)` when `end_exclusive`, else `[admission, end]`.
    end: Option<DateTime<Utc>>,
    end_exclusive: bool,
    members: Vec<usize>,
}

impl Anchor<'_> {
    fn covers(&self, t: DateTime<Utc>) -> bool {
        t >= self.admission
            && match self.end {
                None => true,
                Some(end) if self.end_exclusive => t < end,
                Some(end) => t <= end,
            }
    }
}

/// Partitions one patient's sorted events into episodes.
pub fn link_events(events: &[Event], policy: &LinkagePolicy) -> Result<Vec<EpisodeOfCare>, BuildError> {
    let Some(first) = events.first() else {
        return Ok(Vec::new());
    };
    let patient_id = first.patient_id.as_str();
    if let Some(e) = events.iter().find(|e| e.patient_id != patient_id) {
        return Err(BuildError::Contract(format!(
            "events of patients {patient_id:?} and {:?} mixed",
            e.patient_id
        )));
    }
    if events.windows(2).any(|w| w[0].sort_key() >= w[1].sort_key()) {
        return Err(BuildError::Contract(
            "events must be strictly sorted by (timestamp, event_id)".into(),
        ));
    }

    let mut keyed: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        if let Some(k) = e.encounter() {
            keyed.entry(k).or_default().push(i);
        }
    }

    let mut anchors: Vec<Anchor> = Vec::new();
    for (key, idxs) in &keyed {
        if let Some(&adm) = idxs
            .iter()
            .find(|&&i| events[i].event_type == EventType::Admission)
        {
            anchors.push(Anchor {
                admission: events[adm].timestamp,
                admission_idx: adm,
                source: AnchorSource::Keyed(key),
                discharge: None,
                end: None,
                end_exclusive: false,
                members: idxs.clone(),
            });
        }
    }
    for (i, e) in events.iter().enumerate() {
        if e.encounter().is_none() && e.event_type == EventType::Admission {
            anchors.push(Anchor {
                admission: e.timestamp,
                admission_idx: i,
                source: AnchorSource::Unkeyed,
                discharge: None,
                end: None,
                end_exclusive: false,
                members: vec![i],
            });
        }
    }
    // Admission indices follow the event order, so this sorts by
    // (admission time, admission event id).
    anchors.sort_by_key(|a| a.admission_idx);

    let grace = Duration::hours(policy.grace_window_hours as i64);
    for i in 0..anchors.len() {
        let next = anchors.get(i + 1).map(|a| a.admission);
        let a = &anchors[i];
        let explicit = match a.source {
            AnchorSource::Keyed(key) => keyed[key]
                .iter()
                .map(|&j| &events[j])
                .filter(|e| e.event_type == EventType::Discharge && e.timestamp >= a.admission)
                .map(|e| e.timestamp)
                .max(),
            AnchorSource::Unkeyed => events
                .iter()
                .filter(|e| {
                    e.encounter().is_none()
                        && e.event_type == EventType::Discharge
                        && e.timestamp >= a.admission
                        && next.is_none_or(|n| e.timestamp < n)
                })
                .map(|e| e.timestamp)
                .next(),
        };
        let a = &mut anchors[i];
        match (explicit, next) {
            (Some(d), next) => {
                a.discharge = Some(d);
                let end = d + grace;
                match next {
                    Some(n) if n <= end => {
                        if n < d {
                            warn!(patient = patient_id, "admission overlaps an earlier stay");
                        }
                        a.end = Some(n);
                        a.end_exclusive = true;
                    }
                    _ => a.end = Some(end),
                }
            }
            (None, Some(n)) => {
                warn!(patient = patient_id, "later admission implicitly closes an open stay");
                a.discharge = Some(n);
                a.end = Some(n);
                a.end_exclusive = true;
            }
            (None, None) => {}
        }
    }

    let mut outpatient: Vec<usize> = Vec::new();
    for (i, e) in events.iter().enumerate() {
        if e.encounter().is_some() || e.event_type == EventType::Admission {
            continue;
        }
        match anchors.iter_mut().find(|a| a.covers(e.timestamp)) {
            Some(a) => a.members.push(i),
            None => outpatient.push(i),
        }
    }

    let mut episodes = Vec::new();
    for a in anchors {
        let mut members = a.members;
        members.sort_unstable();
        let primary = events[a.admission_idx]
            .department
            .clone()
            .or_else(|| members.iter().find_map(|&i| events[i].department.clone()));
        episodes.push(assemble(
            events,
            &members,
            Some(a.admission),
            a.discharge,
            primary,
        ));
    }
    for idxs in keyed.values() {
        if !idxs
            .iter()
            .any(|&i| events[i].event_type == EventType::Admission)
        {
            episodes.push(span_episode(events, idxs));
        }
    }
    let gap = Duration::hours(policy.session_gap_hours as i64);
    let mut chain: Vec<usize> = Vec::new();
    for i in outpatient {
        if let Some(&last) = chain.last() {
            if events[i].timestamp - events[last].timestamp > gap {
                episodes.push(span_episode(events, &chain));
                chain.clear();
            }
        }
        chain.push(i);
    }
    if !chain.is_empty() {
        episodes.push(span_episode(events, &chain));
    }

    episodes.sort_by(|a, b| a.events[0].sort_key().cmp(&b.events[0].sort_key()));
    Ok(episodes)
}

/// Episode without an admission: it spans its first to its last event.
fn span_episode(events: &[Event], members: &[usize]) -> EpisodeOfCare {
    let first = events[members[0]].timestamp;
    let last = events[*members.last().unwrap()].timestamp;
    let primary = members.iter().find_map(|&i| events[i].department.clone());
    assemble(events, members, Some(first), Some(last), primary)
}

fn assemble(
    events: &[Event],
    members: &[usize],
    admission: Option<DateTime<Utc>>,
    discharge: Option<DateTime<Utc>>,
    primary_department: Option<String>,
) -> EpisodeOfCare {
    let evs: Vec<Event> = members.iter().map(|&i| events[i].clone()).collect();
    let patient_id = evs[0].patient_id.clone();
    derive_fields(EpisodeOfCare {
        episode_id: make_episode_id(&patient_id, &evs[0].event_id),
        patient_id,
        events: evs,
        admission_time: admission,
        discharge_time: discharge,
        open: discharge.is_none(),
        primary_department,
        derived: Derived::default(),
        cohort_labels: BTreeSet::new(),
    })
}

fn plan_patients(
    snap: &Snapshot,
    patients: &[String],
    policy: &LinkagePolicy,
    cohorts: &CohortRegistry,
) -> Result<(EpisodeBatch, BuildReport), BuildError> {
    let mut batch = EpisodeBatch::default();
    let mut report = BuildReport::default();
    for pid in patients {
        let events = snap.scan_events(pid);
        let mut linked = link_events(&events, policy)?;
        let patient = snap.patient(pid);
        let mut fresh = BTreeSet::new();
        for ep in linked.iter_mut() {
            ep.cohort_labels = cohorts.labels_for(ep, patient);
            fresh.insert(ep.episode_id.clone());
        }
        for old in snap.episode_ids_of(pid) {
            if !fresh.contains(&old) {
                batch.tombstones.push(old);
                report.episodes_tombstoned += 1;
            }
        }
        for ep in linked {
            if snap.get_episode(&ep.episode_id).as_deref() != Some(&ep) {
                batch.episodes.push(ep);
                report.episodes_written += 1;
            }
        }
        batch.cleaned.push(pid.clone());
    }
    Ok((batch, report))
}

fn build(
    repo: &Repository,
    policy: &LinkagePolicy,
    select: impl FnOnce(&Snapshot) -> Vec<String>,
) -> Result<BuildReport, BuildError> {
    let cohorts = repo.cohorts();
    let mut result = Ok(BuildReport::default());
    repo.commit_episodes_with(|snap| {
        let patients = select(snap);
        match plan_patients(snap, &patients, policy, &cohorts) {
            Ok((batch, report)) => {
                result = Ok(report);
                batch
            }
            Err(e) => {
                result = Err(e);
                EpisodeBatch::default()
            }
        }
    })?;
    result
}

/// Relinks every patient from scratch; stale episode ids are tombstoned.
pub fn rebuild_all(repo: &Repository, policy: &LinkagePolicy) -> Result<BuildReport, BuildError> {
    build(repo, policy, |snap| {
        let mut ids: BTreeSet<String> = snap.patient_ids_with_events().cloned().collect();
        ids.extend(snap.dirty_patients().iter().cloned());
        ids.into_iter().collect()
    })
}

/// Relinks only the patients whose events changed since the last build.
pub fn apply_increment(repo: &Repository, policy: &LinkagePolicy) -> Result<BuildReport, BuildError> {
    build(repo, policy, |snap| snap.dirty_patients().iter().cloned().collect())
}

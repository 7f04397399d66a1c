use super::*;
use crate::builder::{link_events, LinkagePolicy};
use crate::model::{make_event_id, EventType, Gender};
use chrono::{NaiveDate, TimeZone};

fn at(day: u32, hour: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2015, 3, day, hour, 0, 0).unwrap()
}

fn ev(patient: &str, key: &str, t: EventType, ts: DateTime<Utc>) -> Event {
    Event {
        event_id: make_event_id("adt", key).unwrap(),
        patient_id: patient.into(),
        encounter_id: None,
        event_type: t,
        timestamp: ts,
        department: Some("cardiology".into()),
        attributes: Default::default(),
        amount: t.is_financial().then(|| "10.00".parse().unwrap()),
        source_id: "adt".into(),
        source_native_key: key.into(),
    }
}

fn patient(id: &str) -> Patient {
    Patient {
        patient_id: id.into(),
        birth_date: NaiveDate::from_ymd_opt(1950, 1, 1).unwrap(),
        gender: Gender::F,
    }
}

fn three() -> Vec<Event> {
    vec![
        ev("P1", "r1", EventType::Admission, at(1, 8)),
        ev("P1", "r2", EventType::LabResult, at(2, 8)),
        ev("P1", "r3", EventType::Discharge, at(4, 8)),
    ]
}

fn episodes_of(repo: &Repository, pid: &str) -> Vec<EpisodeOfCare> {
    link_events(&repo.scan_events(pid), &LinkagePolicy::default()).unwrap()
}

fn contents(repo: &Repository) -> (Vec<String>, Vec<String>, BTreeSet<String>) {
    let snap = repo.snapshot();
    let mut events: Vec<String> = snap
        .events
        .values()
        .map(|e| to_canonical_string(e.as_ref()))
        .collect();
    events.sort();
    (events, snap.episode_documents(), snap.dirty.clone())
}

fn open_rw(dir: &Path) -> Repository {
    let repo = Repository::open(dir, Mode::ReadWrite).unwrap();
    repo.set_sync(false);
    repo
}

#[test]
fn upsert_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let repo = open_rw(dir.path());
    assert_eq!(repo.upsert_events(&three()).unwrap(), 3);
    assert_eq!(repo.upsert_events(&three()).unwrap(), 0);
    assert_eq!(repo.snapshot().event_count(), 3);
}

#[test]
fn changed_content_overwrites_and_marks_dirty() {
    let dir = tempfile::tempdir().unwrap();
    let repo = open_rw(dir.path());
    repo.upsert_events(&three()).unwrap();
    repo.commit_episodes_with(|snap| EpisodeBatch {
        cleaned: snap.dirty_patients().iter().cloned().collect(),
        ..Default::default()
    })
    .unwrap();
    assert!(repo.snapshot().dirty_patients().is_empty());

    let mut changed = three();
    changed[1].department = Some("oncology".into());
    let outcome = repo.upsert(&changed[1..2], &[]).unwrap();
    assert_eq!(outcome.new_events, 0);
    assert_eq!(outcome.changed_events, 1);
    let snap = repo.snapshot();
    assert!(snap.dirty_patients().contains("P1"));
    assert_eq!(
        snap.event(&changed[1].event_id).unwrap().department.as_deref(),
        Some("oncology")
    );
    assert_eq!(snap.scan_events("P1").len(), 3);
}

#[test]
fn scan_events_is_ordered_and_empty_for_unknown() {
    let dir = tempfile::tempdir().unwrap();
    let repo = open_rw(dir.path());
    let mut evs = three();
    evs.reverse();
    repo.upsert_events(&evs).unwrap();
    let scanned = repo.scan_events("P1");
    let mut expected = three();
    expected.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    assert_eq!(scanned, expected);
    assert!(repo.scan_events("nobody").is_empty());
}

#[test]
fn put_get_and_tombstone() {
    let dir = tempfile::tempdir().unwrap();
    let repo = open_rw(dir.path());
    let evs = vec![
        ev("P1", "a", EventType::LabResult, at(1, 8)),
        ev("P1", "b", EventType::LabResult, at(5, 8)),
    ];
    repo.upsert_events(&evs).unwrap();
    let split = episodes_of(&repo, "P1");
    assert_eq!(split.len(), 2);
    assert_eq!(repo.put_episodes(&split, &[]).unwrap(), 2);
    for e in &split {
        assert_eq!(repo.get_episode(&e.episode_id).as_deref(), Some(e));
    }

    let merged = link_events(
        &repo.scan_events("P1"),
        &LinkagePolicy {
            grace_window_hours: 72,
            session_gap_hours: 24 * 10,
        },
    )
    .unwrap();
    assert_eq!(merged.len(), 1);
    let stale: Vec<String> = split
        .iter()
        .map(|e| e.episode_id.clone())
        .filter(|id| *id != merged[0].episode_id)
        .collect();
    repo.put_episodes(&merged, &stale).unwrap();
    let q = EpisodeFilterQuery::new(at(1, 0), at(20, 0)).unwrap();
    let found = repo.query_episodes(&q).unwrap();
    assert_eq!(found.len(), 1);
    assert_eq!(found[0].events.len(), 2);
    for id in &stale {
        assert!(repo.get_episode(id).is_none());
    }
    assert!(repo.get_episode("ep_unknown").is_none());
}

#[test]
fn invalid_episode_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let repo = open_rw(dir.path());
    repo.upsert_events(&three()).unwrap();
    let mut e = episodes_of(&repo, "P1").remove(0);
    e.derived.died = true;
    assert!(matches!(
        repo.put_episodes(&[e], &[]),
        Err(StoreError::Model(_))
    ));
    assert_eq!(repo.snapshot().episode_count(), 0);
}

#[test]
fn query_window_and_unknown_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let repo = open_rw(dir.path());
    repo.upsert_events(&three()).unwrap();
    repo.put_episodes(&episodes_of(&repo, "P1"), &[]).unwrap();
    let hit = EpisodeFilterQuery::new(at(1, 8), at(1, 9)).unwrap();
    assert_eq!(repo.query_episodes(&hit).unwrap().len(), 1);
    let miss = EpisodeFilterQuery::new(at(1, 0), at(1, 8)).unwrap();
    assert!(repo.query_episodes(&miss).unwrap().is_empty());
    assert!(EpisodeFilterQuery::new(at(2, 0), at(1, 0)).is_err());
    let q = hit.with_cohort(Some("nope".into()));
    assert!(matches!(
        repo.query_episodes(&q),
        Err(StoreError::UnknownCohort(_))
    ));
}

#[test]
fn state_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let before = {
        let repo = open_rw(dir.path());
        repo.upsert(&three(), &[patient("P1")]).unwrap();
        repo.put_episodes(&episodes_of(&repo, "P1"), &[]).unwrap();
        repo.watermark_set("adt", Watermark::at(at(4, 8))).unwrap();
        contents(&repo)
    };
    let repo = Repository::open(dir.path(), Mode::ReadOnly).unwrap();
    assert_eq!(contents(&repo), before);
    assert_eq!(repo.watermark_get("adt"), Watermark::at(at(4, 8)));
    assert_eq!(repo.watermark_get("other"), Watermark::NONE);
    assert_eq!(repo.snapshot().patient("P1"), Some(&patient("P1")));
    assert!(matches!(
        repo.upsert_events(&three()),
        Err(StoreError::ReadOnly)
    ));
}

#[test]
fn fractional_stays_reload_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let adm = Utc.with_ymd_and_hms(2015, 1, 3, 17, 49, 0).unwrap();
    let dis = Utc.with_ymd_and_hms(2015, 1, 14, 8, 33, 0).unwrap();
    let before = {
        let repo = open_rw(dir.path());
        repo.upsert_events(&[
            ev("P1", "a", EventType::Admission, adm),
            ev("P1", "d", EventType::Discharge, dis),
        ])
        .unwrap();
        repo.put_episodes(&episodes_of(&repo, "P1"), &[]).unwrap();
        repo.snapshot().episode_documents()
    };
    assert!(before[0].contains("10.613888888888889"), "{}", before[0]);
    let repo = Repository::open(dir.path(), Mode::ReadOnly).unwrap();
    assert_eq!(repo.snapshot().episode_documents(), before);
}

#[test]
fn second_writer_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let _repo = open_rw(dir.path());
    assert!(matches!(
        Repository::open(dir.path(), Mode::ReadWrite),
        Err(StoreError::Locked(_))
    ));
    assert!(Repository::open(dir.path(), Mode::ReadOnly).is_ok());
}

#[test]
fn torn_batches_are_all_or_nothing() {
    let probe = tempfile::tempdir().unwrap();
    let frame_len = {
        let repo = open_rw(probe.path());
        repo.upsert_events(&three()[..1]).unwrap();
        let before = fs::metadata(probe.path().join(LOG_FILE)).unwrap().len();
        repo.upsert_events(&three()[1..]).unwrap();
        (fs::metadata(probe.path().join(LOG_FILE)).unwrap().len() - before) as usize
    };
    for cut in (0..frame_len).step_by(7).chain([frame_len - 1]) {
        let dir = tempfile::tempdir().unwrap();
        let before = {
            let repo = open_rw(dir.path());
            repo.upsert_events(&three()[..1]).unwrap();
            let before = contents(&repo);
            repo.inject_crash(CrashPoint::TornWrite(cut));
            assert!(matches!(
                repo.upsert_events(&three()[1..]),
                Err(StoreError::InjectedCrash)
            ));
            assert_eq!(contents(&repo), before);
            assert!(matches!(
                repo.upsert_events(&three()),
                Err(StoreError::Poisoned)
            ));
            before
        };
        let repo = open_rw(dir.path());
        assert_eq!(contents(&repo), before, "cut at {cut}");
        assert_eq!(repo.upsert_events(&three()).unwrap(), 2);
        drop(repo);
        let repo = open_rw(dir.path());
        assert_eq!(repo.snapshot().event_count(), 3);
    }
}

#[test]
fn fully_written_batch_survives_crash_before_ack() {
    let dir = tempfile::tempdir().unwrap();
    {
        let repo = open_rw(dir.path());
        repo.inject_crash(CrashPoint::AfterWrite);
        assert!(repo.upsert_events(&three()).is_err());
    }
    let repo = open_rw(dir.path());
    assert_eq!(repo.snapshot().event_count(), 3);
}

#[test]
fn compaction_preserves_state() {
    let dir = tempfile::tempdir().unwrap();
    let before = {
        let repo = open_rw(dir.path());
        repo.upsert(&three(), &[patient("P1")]).unwrap();
        repo.put_episodes(&episodes_of(&repo, "P1"), &[]).unwrap();
        repo.upsert_events(&[ev("P2", "x", EventType::LabResult, at(9, 9))])
            .unwrap();
        repo.compact().unwrap();
        let after = contents(&repo);
        repo.upsert_events(&[ev("P2", "y", EventType::LabResult, at(9, 10))])
            .unwrap();
        assert_ne!(contents(&repo), after);
        contents(&repo)
    };
    let repo = open_rw(dir.path());
    assert_eq!(contents(&repo), before);
    assert!(repo.snapshot().dirty_patients().contains("P2"));
    assert!(repo.snapshot().dirty_patients().contains("P1"));
}

#[test]
fn reset_watermarks_clears_all() {
    let dir = tempfile::tempdir().unwrap();
    let repo = open_rw(dir.path());
    repo.watermark_set("a", Watermark::at(at(1, 1))).unwrap();
    repo.watermark_set("b", Watermark::at(at(2, 1))).unwrap();
    repo.reset_watermarks().unwrap();
    assert_eq!(repo.watermark_get("a"), Watermark::NONE);
    drop(repo);
    let repo = open_rw(dir.path());
    assert_eq!(repo.watermark_get("b"), Watermark::NONE);
}

#[test]
fn readers_keep_their_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let repo = open_rw(dir.path());
    repo.upsert_events(&three()[..1]).unwrap();
    let old = repo.snapshot();
    repo.upsert_events(&three()[1..]).unwrap();
    assert_eq!(old.event_count(), 1);
    assert_eq!(repo.snapshot().event_count(), 3);
}

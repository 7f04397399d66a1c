//! The central episode-of-care repository.
//!
//! An embedded, single-node document store. All mutations are appended as
//! checksummed batches to `events.log`; compaction writes the current episode
//! documents to `episodes/snapshot.eoc` and rewrites the log as one
//! checkpoint batch. Per-source watermarks and cohort/tracked-item registries
//! live as JSON documents under `meta/`.
//!
//! One read-write handle may exist per root directory (guarded by a lock
//! file); read-only handles load the durable state at open time. Readers take
//! an immutable [`Snapshot`] and never observe a partially applied batch.

mod log;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{self, Write};
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::classify::CohortRegistry;
use crate::filter::{evaluate, FilterAst};
use crate::model::{
    deserialize_episode, to_canonical_string, EpisodeOfCare, Event, ModelError, Patient,
};

pub use self::log::MAGIC;

const LOG_FILE: &str = "events.log";
const SNAPSHOT_FILE: &str = "snapshot.eoc";
const LOCK_FILE: &str = "LOCK";
const WATERMARKS_FILE: &str = "watermarks.json";
const COHORTS_FILE: &str = "cohorts.json";
const TRACKED_FILE: &str = "tracked.json";
const AUTO_COMPACT_BYTES: u64 = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt repository: {0}")]
    Corrupt(String),
    #[error("repository at {0} is already open for writing")]
    Locked(PathBuf),
    #[error("repository handle is read-only")]
    ReadOnly,
    #[error("injected crash during write")]
    InjectedCrash,
    #[error("repository handle is unusable after a failed write; reopen it")]
    Poisoned,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown cohort {0:?}")]
    UnknownCohort(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    ReadWrite,
    ReadOnly,
}

/// Test hook that simulates a process crash part-way through a log append.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// Write only the first `n` bytes of the next batch frame, then fail.
    TornWrite(usize),
    /// Write the full frame but fail before the batch is acknowledged.
    AfterWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Watermark {
    pub high_water: Option<DateTime<Utc>>,
}

impl Watermark {
    pub const NONE: Watermark = Watermark { high_water: None };

    pub fn at(t: DateTime<Utc>) -> Self {
        Watermark {
            high_water: Some(t),
        }
    }
}

/// Time-window query over episode admission times.
#[derive(Debug, Clone)]
pub struct EpisodeFilterQuery {
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
    pub filter: Option<FilterAst>,
    pub cohort: Option<String>,
}

impl EpisodeFilterQuery {
    pub fn new(from: DateTime<Utc>, to: DateTime<Utc>) -> Result<Self, StoreError> {
        if from >= to {
            return Err(StoreError::InvalidQuery(format!(
                "from ({from}) must be before to ({to})"
            )));
        }
        Ok(EpisodeFilterQuery {
            from,
            to,
            filter: None,
            cohort: None,
        })
    }

    pub fn with_filter(mut self, filter: Option<FilterAst>) -> Self {
        self.filter = filter;
        self
    }

    pub fn with_cohort(mut self, cohort: Option<String>) -> Self {
        self.cohort = cohort;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Op {
    Event { event: Event },
    Patient { patient: Patient },
    Episode { episode: EpisodeOfCare },
    Tombstone { episode_id: String },
    Clean { patients: Vec<String> },
    Dirty { patients: Vec<String> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Batch {
    seq: u64,
    #[serde(default)]
    checkpoint: bool,
    ops: Vec<Op>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    seq: u64,
    count: usize,
}

/// Immutable view of the repository contents at one point in time.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    events: HashMap<String, Arc<Event>>,
    events_by_patient: BTreeMap<String, BTreeSet<(DateTime<Utc>, String)>>,
    patients: BTreeMap<String, Patient>,
    episodes: HashMap<String, Arc<EpisodeOfCare>>,
    by_admission: BTreeSet<(DateTime<Utc>, String)>,
    episodes_by_patient: BTreeMap<String, BTreeSet<String>>,
    dirty: BTreeSet<String>,
    seq: u64,
    max_event_time: Option<DateTime<Utc>>,
}

impl Snapshot {
    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn event(&self, event_id: &str) -> Option<&Event> {
        self.events.get(event_id).map(|e| e.as_ref())
    }

    pub fn patient(&self, patient_id: &str) -> Option<&Patient> {
        self.patients.get(patient_id)
    }

    pub fn patients(&self) -> impl Iterator<Item = &Patient> {
        self.patients.values()
    }

    /// Latest event timestamp stored, i.e. the end of the observed data.
    pub fn max_event_time(&self) -> Option<DateTime<Utc>> {
        self.max_event_time
    }

    pub fn min_event_time(&self) -> Option<DateTime<Utc>> {
        self.events_by_patient
            .values()
            .filter_map(|s| s.first().map(|(t, _)| *t))
            .min()
    }

    pub fn dirty_patients(&self) -> &BTreeSet<String> {
        &self.dirty
    }

    /// Patients that have at least one stored event.
    pub fn patient_ids_with_events(&self) -> impl Iterator<Item = &String> {
        self.events_by_patient.keys()
    }

    pub fn get_episode(&self, episode_id: &str) -> Option<Arc<EpisodeOfCare>> {
        self.episodes.get(episode_id).cloned()
    }

    pub fn episode_ids_of(&self, patient_id: &str) -> Vec<String> {
        self.episodes_by_patient
            .get(patient_id)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// All episodes ordered by (admission_time, episode_id); episodes without
    /// an admission time come last, ordered by id.
    pub fn all_episodes(&self) -> Vec<Arc<EpisodeOfCare>> {
        let mut out: Vec<_> = self
            .by_admission
            .iter()
            .map(|(_, id)| self.episodes[id].clone())
            .collect();
        let mut rest: Vec<_> = self
            .episodes
            .values()
            .filter(|e| e.admission_time.is_none())
            .cloned()
            .collect();
        rest.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
        out.extend(rest);
        out
    }

    /// Stored events of one patient ordered by (timestamp, event_id).
    pub fn scan_events(&self, patient_id: &str) -> Vec<Event> {
        self.events_by_patient
            .get(patient_id)
            .map(|ids| {
                ids.iter()
                    .map(|(_, id)| self.events[id].as_ref().clone())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Episodes admitted in `[from, to)` passing the optional filter and cohort.
    pub fn query_episodes(
        &self,
        q: &EpisodeFilterQuery,
        cohorts: &CohortRegistry,
    ) -> Result<Vec<Arc<EpisodeOfCare>>, StoreError> {
        if q.from >= q.to {
            return Err(StoreError::InvalidQuery("from must be before to".into()));
        }
        if let Some(c) = &q.cohort {
            if !cohorts.is_known(c) {
                return Err(StoreError::UnknownCohort(c.clone()));
            }
        }
        let lo = Bound::Included((q.from, String::new()));
        let hi = Bound::Excluded((q.to, String::new()));
        Ok(self
            .by_admission
            .range((lo, hi))
            .map(|(_, id)| &self.episodes[id])
            .filter(|e| {
                q.cohort
                    .as_ref()
                    .is_none_or(|c| e.cohort_labels.contains(c))
            })
            .filter(|e| {
                q.filter
                    .as_ref()
                    .is_none_or(|f| evaluate(f, e, self.patients.get(&e.patient_id)))
            })
            .cloned()
            .collect())
    }

    /// Canonical documents of every stored episode, ordered by episode id.
    pub fn episode_documents(&self) -> Vec<String> {
        let mut ids: Vec<&String> = self.episodes.keys().collect();
        ids.sort();
        ids.into_iter()
            .map(|id| to_canonical_string(self.episodes[id].as_ref()))
            .collect()
    }

    fn index_episode(&mut self, e: &EpisodeOfCare) {
        if let Some(at) = e.admission_time {
            self.by_admission.insert((at, e.episode_id.clone()));
        }
        self.episodes_by_patient
            .entry(e.patient_id.clone())
            .or_default()
            .insert(e.episode_id.clone());
    }

    fn unindex_episode(&mut self, e: &EpisodeOfCare) {
        if let Some(at) = e.admission_time {
            self.by_admission.remove(&(at, e.episode_id.clone()));
        }
        if let Some(set) = self.episodes_by_patient.get_mut(&e.patient_id) {
            set.remove(&e.episode_id);
            if set.is_empty() {
                self.episodes_by_patient.remove(&e.patient_id);
            }
        }
    }

    fn apply(&mut self, batch: &Batch, skip_episode_ops_upto: u64) {
        let episode_ops = batch.seq > skip_episode_ops_upto;
        for op in &batch.ops {
            match op {
                Op::Event { event } => {
                    let prev = self.events.get(&event.event_id).cloned();
                    if let Some(prev) = &prev {
                        if prev.as_ref() == event {
                            continue;
                        }
                        if let Some(set) = self.events_by_patient.get_mut(&prev.patient_id) {
                            set.remove(&(prev.timestamp, prev.event_id.clone()));
                            if set.is_empty() {
                                self.events_by_patient.remove(&prev.patient_id);
                            }
                        }
                        if !batch.checkpoint {
                            self.dirty.insert(prev.patient_id.clone());
                        }
                    }
                    self.events_by_patient
                        .entry(event.patient_id.clone())
                        .or_default()
                        .insert((event.timestamp, event.event_id.clone()));
                    if !batch.checkpoint {
                        self.dirty.insert(event.patient_id.clone());
                    }
                    self.max_event_time = self.max_event_time.max(Some(event.timestamp));
                    self.events
                        .insert(event.event_id.clone(), Arc::new(event.clone()));
                }
                Op::Patient { patient } => {
                    if self.patients.get(&patient.patient_id) != Some(patient) {
                        if !batch.checkpoint {
                            self.dirty.insert(patient.patient_id.clone());
                        }
                        self.patients
                            .insert(patient.patient_id.clone(), patient.clone());
                    }
                }
                Op::Episode { episode } if episode_ops => {
                    if let Some(prev) = self.episodes.remove(&episode.episode_id) {
                        self.unindex_episode(&prev);
                    }
                    self.index_episode(episode);
                    self.episodes
                        .insert(episode.episode_id.clone(), Arc::new(episode.clone()));
                }
                Op::Tombstone { episode_id } if episode_ops => {
                    if let Some(prev) = self.episodes.remove(episode_id) {
                        self.unindex_episode(&prev);
                    }
                }
                Op::Episode { .. } | Op::Tombstone { .. } => {}
                Op::Clean { patients } => {
                    for p in patients {
                        self.dirty.remove(p);
                    }
                }
                Op::Dirty { patients } => self.dirty.extend(patients.iter().cloned()),
            }
        }
        self.seq = self.seq.max(batch.seq);
    }
}

/// Episode writes, removals and dirty-flag clears committed together.
#[derive(Debug, Clone, Default)]
pub struct EpisodeBatch {
    pub episodes: Vec<EpisodeOfCare>,
    pub tombstones: Vec<String>,
    /// Patients whose dirty flag is cleared by this batch.
    pub cleaned: Vec<String>,
}

/// Counts reported by [`Repository::upsert`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpsertOutcome {
    /// Events whose id was not stored before.
    pub new_events: usize,
    /// Existing events overwritten with different content.
    pub changed_events: usize,
    pub changed_patients: usize,
}

struct Writer {
    log: File,
    log_len: u64,
    crash: Option<CrashPoint>,
    poisoned: bool,
    sync: bool,
}

struct Inner {
    root: PathBuf,
    mode: Mode,
    state: RwLock<Arc<Snapshot>>,
    writer: Mutex<Option<Writer>>,
    watermarks: Mutex<BTreeMap<String, Watermark>>,
    cohorts: RwLock<Arc<CohortRegistry>>,
    _lock: Option<File>,
}

/// Shareable repository handle.
#[derive(Clone)]
pub struct Repository {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Repository {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Repository")
            .field("root", &self.inner.root)
            .field("mode", &self.inner.mode)
            .finish()
    }
}

fn corrupt(what: impl std::fmt::Display) -> StoreError {
    StoreError::Corrupt(what.to_string())
}

impl Repository {
    pub fn open(root: impl AsRef<Path>, mode: Mode) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        let lock = match mode {
            Mode::ReadWrite => {
                fs::create_dir_all(root.join("episodes"))?;
                fs::create_dir_all(root.join("meta"))?;
                let f = File::options()
                    .create(true)
                    .truncate(false)
                    .write(true)
                    .open(root.join(LOCK_FILE))?;
                match f.try_lock() {
                    Ok(()) => Some(f),
                    Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(root)),
                    Err(fs::TryLockError::Error(e)) => return Err(e.into()),
                }
            }
            Mode::ReadOnly => None,
        };

        let mut snap = Snapshot::default();
        let snapshot_path = root.join("episodes").join(SNAPSHOT_FILE);
        let mut snapshot_seq = 0;
        if let Some(read) = log::read_frames(&snapshot_path)? {
            if read.torn {
                return Err(corrupt("episode snapshot is truncated"));
            }
            let mut frames = read.frames.into_iter();
            if let Some(head) = frames.next() {
                let header: SnapshotHeader = serde_json::from_slice(&head).map_err(corrupt)?;
                snapshot_seq = header.seq;
                for doc in frames {
                    let text = String::from_utf8(doc).map_err(corrupt)?;
                    let ep = deserialize_episode(&text)?;
                    snap.index_episode(&ep);
                    snap.episodes.insert(ep.episode_id.clone(), Arc::new(ep));
                }
                snap.seq = snapshot_seq;
            }
        }

        let log_path = root.join(LOG_FILE);
        let mut valid_len = None;
        if let Some(read) = log::read_frames(&log_path)? {
            if read.torn {
                warn!(path = %log_path.display(), valid = read.valid_len, "discarding torn log tail");
            }
            for frame in &read.frames {
                let batch: Batch = serde_json::from_slice(frame).map_err(corrupt)?;
                snap.apply(&batch, snapshot_seq);
            }
            valid_len = Some(read.valid_len);
        }

        let writer = match mode {
            Mode::ReadWrite => {
                let log = log::open_append(&log_path, valid_len)?;
                let log_len = log.metadata()?.len();
                Some(Writer {
                    log,
                    log_len,
                    crash: None,
                    poisoned: false,
                    sync: true,
                })
            }
            Mode::ReadOnly => None,
        };

        let watermarks = read_meta::<BTreeMap<String, Watermark>>(&root, WATERMARKS_FILE)?
            .unwrap_or_default();
        let cohorts = read_meta::<CohortRegistry>(&root, COHORTS_FILE)?.unwrap_or_default();

        Ok(Repository {
            inner: Arc::new(Inner {
                root,
                mode,
                state: RwLock::new(Arc::new(snap)),
                writer: Mutex::new(writer),
                watermarks: Mutex::new(watermarks),
                cohorts: RwLock::new(Arc::new(cohorts)),
                _lock: lock,
            }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.inner.root
    }

    pub fn mode(&self) -> Mode {
        self.inner.mode
    }

    /// Consistent read view of the latest committed state.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.inner.state.read().unwrap().clone()
    }

    /// Disables fsync after each batch. Only for tests and bulk loads.
    pub fn set_sync(&self, sync: bool) {
        if let Some(w) = self.inner.writer.lock().unwrap().as_mut() {
            w.sync = sync;
        }
    }

    pub fn inject_crash(&self, point: CrashPoint) {
        if let Some(w) = self.inner.writer.lock().unwrap().as_mut() {
            w.crash = Some(point);
        }
    }

    fn commit(&self, build: impl FnOnce(&Snapshot) -> Vec<Op>) -> Result<Arc<Snapshot>, StoreError> {
        let mut guard = self.inner.writer.lock().unwrap();
        let writer = guard.as_mut().ok_or(StoreError::ReadOnly)?;
        if writer.poisoned {
            return Err(StoreError::Poisoned);
        }
        let current = self.snapshot();
        let ops = build(&current);
        if ops.is_empty() {
            return Ok(current);
        }
        let batch = Batch {
            seq: current.seq + 1,
            checkpoint: false,
            ops,
        };
        let payload = to_canonical_string(&batch).into_bytes();
        let frame = log::encode_frame(&payload);
        if let Err(e) = write_frame(writer, &frame) {
            writer.poisoned = true;
            return Err(e);
        }
        let next = {
            let mut state = self.inner.state.write().unwrap();
            Arc::make_mut(&mut state).apply(&batch, 0);
            state.clone()
        };
        let too_big = writer.log_len > AUTO_COMPACT_BYTES;
        drop(guard);
        if too_big {
            self.compact()?;
        }
        Ok(next)
    }

    /// Stores events and patient demographics in one atomic batch.
    pub fn upsert(
        &self,
        events: &[Event],
        patients: &[Patient],
    ) -> Result<UpsertOutcome, StoreError> {
        for e in events {
            e.validate()?;
        }
        let mut outcome = UpsertOutcome::default();
        self.commit(|snap| {
            let mut ops = Vec::new();
            let mut staged: HashMap<&str, &Event> = HashMap::new();
            for e in events {
                let prev = staged
                    .get(e.event_id.as_str())
                    .copied()
                    .or_else(|| snap.event(&e.event_id));
                match prev {
                    Some(p) if p == e => continue,
                    Some(_) => {
                        warn!(event_id = %e.event_id, "conflicting event content, last writer wins");
                        outcome.changed_events += 1;
                    }
                    None => outcome.new_events += 1,
                }
                staged.insert(&e.event_id, e);
                ops.push(Op::Event { event: e.clone() });
            }
            let mut staged_patients: HashMap<&str, &Patient> = HashMap::new();
            for p in patients {
                let prev = staged_patients
                    .get(p.patient_id.as_str())
                    .copied()
                    .or_else(|| snap.patient(&p.patient_id));
                if prev == Some(p) {
                    continue;
                }
                outcome.changed_patients += 1;
                staged_patients.insert(&p.patient_id, p);
                ops.push(Op::Patient { patient: p.clone() });
            }
            ops
        })?;
        Ok(outcome)
    }

    /// Returns the number of events not previously stored.
    pub fn upsert_events(&self, events: &[Event]) -> Result<usize, StoreError> {
        Ok(self.upsert(events, &[])?.new_events)
    }

    /// Writes episodes (replacing prior versions by id) and removes the
    /// tombstoned ids, atomically.
    pub fn put_episodes(
        &self,
        episodes: &[EpisodeOfCare],
        tombstones: &[String],
    ) -> Result<usize, StoreError> {
        for e in episodes {
            e.validate()?;
        }
        self.commit_episodes_with(|_| EpisodeBatch {
            episodes: episodes.to_vec(),
            tombstones: tombstones.to_vec(),
            cleaned: Vec::new(),
        })
    }

    /// Plans an episode batch against the latest state, under the writer
    /// lock, and commits it atomically.
    pub fn commit_episodes_with(
        &self,
        plan: impl FnOnce(&Snapshot) -> EpisodeBatch,
    ) -> Result<usize, StoreError> {
        let mut written = 0;
        let mut invalid = None;
        self.commit(|snap| {
            let batch = plan(snap);
            if let Some(err) = batch.episodes.iter().find_map(|e| e.validate().err()) {
                invalid = Some(err);
                return Vec::new();
            }
            written = batch.episodes.len();
            let mut ops: Vec<Op> = batch
                .tombstones
                .into_iter()
                .filter(|id| snap.episodes.contains_key(id))
                .map(|episode_id| Op::Tombstone { episode_id })
                .collect();
            ops.extend(batch.episodes.into_iter().map(|episode| Op::Episode { episode }));
            let cleaned: Vec<String> = batch
                .cleaned
                .into_iter()
                .filter(|p| snap.dirty.contains(p))
                .collect();
            if !cleaned.is_empty() {
                ops.push(Op::Clean { patients: cleaned });
            }
            ops
        })?;
        match invalid {
            Some(err) => Err(err.into()),
            None => Ok(written),
        }
    }

    pub fn get_episode(&self, episode_id: &str) -> Option<Arc<EpisodeOfCare>> {
        self.snapshot().get_episode(episode_id)
    }

    pub fn query_episodes(
        &self,
        q: &EpisodeFilterQuery,
    ) -> Result<Vec<Arc<EpisodeOfCare>>, StoreError> {
        self.snapshot().query_episodes(q, &self.cohorts())
    }

    pub fn scan_events(&self, patient_id: &str) -> Vec<Event> {
        self.snapshot().scan_events(patient_id)
    }

    pub fn watermark_get(&self, source_id: &str) -> Watermark {
        self.inner
            .watermarks
            .lock()
            .unwrap()
            .get(source_id)
            .copied()
            .unwrap_or(Watermark::NONE)
    }

    pub fn watermark_set(&self, source_id: &str, w: Watermark) -> Result<(), StoreError> {
        if self.inner.mode == Mode::ReadOnly {
            return Err(StoreError::ReadOnly);
        }
        let mut marks = self.inner.watermarks.lock().unwrap();
        let mut next = marks.clone();
        next.insert(source_id.to_string(), w);
        write_meta(&self.inner.root, WATERMARKS_FILE, &next)?;
        *marks = next;
        Ok(())
    }

    /// Clears every watermark so the next load re-reads all sources.
    pub fn reset_watermarks(&self) -> Result<(), StoreError> {
        if self.inner.mode == Mode::ReadOnly {
            return Err(StoreError::ReadOnly);
        }
        let mut marks = self.inner.watermarks.lock().unwrap();
        write_meta(&self.inner.root, WATERMARKS_FILE, &BTreeMap::<String, Watermark>::new())?;
        marks.clear();
        Ok(())
    }

    pub fn cohorts(&self) -> Arc<CohortRegistry> {
        self.inner.cohorts.read().unwrap().clone()
    }

    pub fn set_cohorts(&self, registry: CohortRegistry) -> Result<(), StoreError> {
        if self.inner.mode == Mode::ReadOnly {
            return Err(StoreError::ReadOnly);
        }
        let mut guard = self.inner.cohorts.write().unwrap();
        write_meta(&self.inner.root, COHORTS_FILE, &registry)?;
        *guard = Arc::new(registry);
        Ok(())
    }

    pub fn read_tracked<T: DeserializeOwned + Default>(&self) -> Result<T, StoreError> {
        Ok(read_meta(&self.inner.root, TRACKED_FILE)?.unwrap_or_default())
    }

    pub fn write_tracked<T: Serialize>(&self, items: &T) -> Result<(), StoreError> {
        if self.inner.mode == Mode::ReadOnly {
            return Err(StoreError::ReadOnly);
        }
        write_meta(&self.inner.root, TRACKED_FILE, items)
    }

    /// Writes the episode snapshot and rewrites the log as a single
    /// checkpoint batch.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut guard = self.inner.writer.lock().unwrap();
        let writer = guard.as_mut().ok_or(StoreError::ReadOnly)?;
        if writer.poisoned {
            return Err(StoreError::Poisoned);
        }
        let snap = self.snapshot();

        let header = serde_json::to_vec(&SnapshotHeader {
            seq: snap.seq,
            count: snap.episodes.len(),
        })
        .expect("header serializes");
        let docs: Vec<Vec<u8>> = snap
            .episode_documents()
            .into_iter()
            .map(String::into_bytes)
            .collect();
        log::write_frame_file_atomic(
            &self.inner.root.join("episodes").join(SNAPSHOT_FILE),
            std::iter::once(header.as_slice()).chain(docs.iter().map(Vec::as_slice)),
        )?;

        let mut event_ids: Vec<&String> = snap.events.keys().collect();
        event_ids.sort();
        let mut ops: Vec<Op> = event_ids
            .into_iter()
            .map(|id| Op::Event {
                event: snap.events[id].as_ref().clone(),
            })
            .collect();
        ops.extend(snap.patients.values().map(|p| Op::Patient { patient: p.clone() }));
        if !snap.dirty.is_empty() {
            ops.push(Op::Dirty {
                patients: snap.dirty.iter().cloned().collect(),
            });
        }
        let checkpoint = Batch {
            seq: snap.seq,
            checkpoint: true,
            ops,
        };
        let payload = to_canonical_string(&checkpoint).into_bytes();
        let log_path = self.inner.root.join(LOG_FILE);
        log::write_frame_file_atomic(&log_path, [payload.as_slice()])?;
        writer.log = log::open_append(&log_path, None)?;
        writer.log_len = writer.log.metadata()?.len();
        info!(seq = snap.seq, episodes = snap.episodes.len(), "repository compacted");
        Ok(())
    }
}

fn write_frame(writer: &mut Writer, frame: &[u8]) -> Result<(), StoreError> {
    match writer.crash.take() {
        Some(CrashPoint::TornWrite(n)) => {
            writer.log.write_all(&frame[..n.min(frame.len())])?;
            writer.log.sync_all()?;
            return Err(StoreError::InjectedCrash);
        }
        Some(CrashPoint::AfterWrite) => {
            writer.log.write_all(frame)?;
            writer.log.sync_all()?;
            return Err(StoreError::InjectedCrash);
        }
        None => {}
    }
    writer.log.write_all(frame)?;
    if writer.sync {
        writer.log.sync_data()?;
    }
    writer.log_len += frame.len() as u64;
    Ok(())
}

fn read_meta<T: DeserializeOwned>(root: &Path, name: &str) -> Result<Option<T>, StoreError> {
    let path = root.join("meta").join(name);
    match fs::read(&path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes).map_err(|e| {
            corrupt(format!("{}: {e}", path.display()))
        })?)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn write_meta<T: Serialize>(root: &Path, name: &str, value: &T) -> Result<(), StoreError> {
    let dir = root.join("meta");
    fs::create_dir_all(&dir)?;
    let text = to_canonical_string(value);
    log::write_file_atomic(&dir.join(name), text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests;

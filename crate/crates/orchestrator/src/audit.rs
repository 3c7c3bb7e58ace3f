//! Append-only audit log.
//!
//! Events are written as NDJSON to numbered segment files under a
//! directory, rolling every [`SEGMENT_EVENTS`] events. An inverted index
//! over the event type and attribute-value tokens is rebuilt on open.
//! Attribute names are checked against a PII deny list before anything
//! is stored.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

pub const SEGMENT_EVENTS: u64 = 1000;

/// Attribute names that are never accepted.
pub const DENIED_FIELDS: &[&str] = &[
    "full_name",
    "name",
    "surname",
    "given_names",
    "date_of_birth",
    "birth_date",
    "dob",
    "document_number",
    "passport_number",
    "mrz",
    "address",
    "email",
    "phone",
    "username",
    "password",
    "photo",
    "selfie",
    "patient_name",
];

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("attribute {0:?} is a PII field")]
    PiiRejected(String),
    #[error("audit segment {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp: i64,
    pub actor: String,
    pub event_type: String,
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ledger_ref: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NewEvent {
    pub timestamp: i64,
    pub actor: String,
    pub event_type: String,
    pub attributes: BTreeMap<String, String>,
    pub ledger_ref: Option<u64>,
}

impl NewEvent {
    pub fn new(event_type: &str, actor: &str, timestamp: i64) -> Self {
        Self { timestamp, actor: actor.into(), event_type: event_type.into(), ..Self::default() }
    }

    pub fn attr(mut self, key: &str, value: impl ToString) -> Self {
        self.attributes.insert(key.into(), value.to_string());
        self
    }

    pub fn ledger_ref(mut self, seq: u64) -> Self {
        self.ledger_ref = Some(seq);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditQuery {
    /// Case-insensitive substring over event type, actor and attribute values.
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub from: Option<i64>,
    /// Exclusive upper bound.
    #[serde(default)]
    pub to: Option<i64>,
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportBucket {
    pub day: String,
    pub event_type: String,
    pub count: u64,
}

#[derive(Default)]
struct Store {
    events: Vec<AuditEvent>,
    index: HashMap<String, BTreeSet<usize>>,
}

impl Store {
    fn insert(&mut self, ev: AuditEvent) {
        let pos = self.events.len();
        for token in tokens(&ev) {
            self.index.entry(token).or_default().insert(pos);
        }
        self.events.push(ev);
    }
}

struct Appender {
    dir: Option<PathBuf>,
    file: Option<File>,
    next_seq: u64,
}

pub struct AuditLog {
    store: RwLock<Store>,
    appender: Mutex<Appender>,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog").field("len", &self.len()).finish()
    }
}

fn tokens(ev: &AuditEvent) -> BTreeSet<String> {
    [ev.event_type.as_str(), ev.actor.as_str()]
        .into_iter()
        .chain(ev.attributes.values().map(String::as_str))
        .flat_map(|v| {
            let lower = v.to_lowercase();
            let mut parts: Vec<String> =
                lower.split(|c: char| !c.is_alphanumeric()).filter(|p| !p.is_empty()).map(str::to_string).collect();
            parts.push(lower);
            parts
        })
        .collect()
}

fn segment_path(dir: &Path, n: u64) -> PathBuf {
    dir.join(format!("segment-{n:06}.ndjson"))
}

pub fn day_of(timestamp: i64) -> String {
    time::OffsetDateTime::from_unix_timestamp(timestamp)
        .map(|t| t.date().to_string())
        .unwrap_or_else(|_| "invalid".into())
}

pub fn check_fields(attributes: &BTreeMap<String, String>) -> Result<(), AuditError> {
    for key in attributes.keys() {
        let norm = key.to_lowercase().replace(['-', ' '], "_");
        if DENIED_FIELDS.contains(&norm.as_str()) {
            return Err(AuditError::PiiRejected(key.clone()));
        }
    }
    Ok(())
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self {
            store: RwLock::default(),
            appender: Mutex::new(Appender { dir: None, file: None, next_seq: 1 }),
        }
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, AuditError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut segments: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("segment-") && n.ends_with(".ndjson"))
            })
            .collect();
        segments.sort();
        let mut store = Store::default();
        let mut last = 0;
        for path in &segments {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let ev: AuditEvent = serde_json::from_str(&line)
                    .map_err(|e| AuditError::Corrupt { path: path.clone(), message: e.to_string() })?;
                if ev.seq <= last {
                    return Err(AuditError::Corrupt { path: path.clone(), message: format!("seq {} not increasing", ev.seq) });
                }
                last = ev.seq;
                store.insert(ev);
            }
        }
        Ok(Self {
            store: RwLock::new(store),
            appender: Mutex::new(Appender { dir: Some(dir), file: None, next_seq: last + 1 }),
        })
    }

    pub fn record(&self, event: NewEvent) -> Result<u64, AuditError> {
        check_fields(&event.attributes)?;
        let mut app = self.appender.lock().unwrap();
        let seq = app.next_seq;
        let ev = AuditEvent {
            seq,
            timestamp: event.timestamp,
            actor: event.actor,
            event_type: event.event_type,
            attributes: event.attributes,
            ledger_ref: event.ledger_ref,
        };
        if let Some(dir) = app.dir.clone() {
            if app.file.is_none() || (seq - 1) % SEGMENT_EVENTS == 0 {
                let path = segment_path(&dir, (seq - 1) / SEGMENT_EVENTS + 1);
                app.file = Some(OpenOptions::new().create(true).append(true).open(path)?);
            }
            let mut line = serde_json::to_vec(&ev).expect("event serializes");
            line.push(b'\n');
            let file = app.file.as_mut().expect("segment open");
            file.write_all(&line)?;
            file.flush()?;
        }
        app.next_seq += 1;
        self.store.write().unwrap().insert(ev);
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.store.read().unwrap().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, seq: u64) -> Option<AuditEvent> {
        let store = self.store.read().unwrap();
        store.events.binary_search_by_key(&seq, |e| e.seq).ok().map(|i| store.events[i].clone())
    }

    /// Matching events, newest first.
    pub fn search(&self, q: &AuditQuery) -> Vec<AuditEvent> {
        let store = self.store.read().unwrap();
        let needle = q.text.as_ref().map(|t| t.to_lowercase()).filter(|t| !t.is_empty());
        let in_range = |e: &AuditEvent| {
            q.from.is_none_or(|f| e.timestamp >= f) && q.to.is_none_or(|t| e.timestamp < t)
        };
        let limit = q.limit.unwrap_or(usize::MAX);
        let candidates: Box<dyn Iterator<Item = &AuditEvent>> = match &needle {
            Some(n) => {
                let mut hits: BTreeSet<usize> = BTreeSet::new();
                for (token, positions) in &store.index {
                    if token.contains(n.as_str()) {
                        hits.extend(positions);
                    }
                }
                Box::new(hits.into_iter().rev().map(|i| &store.events[i]))
            }
            None => Box::new(store.events.iter().rev()),
        };
        candidates.filter(|e| in_range(e)).take(limit).cloned().collect()
    }

    /// Counts per (UTC day, event type), sorted by day then type.
    pub fn report(&self, from: Option<i64>, to: Option<i64>) -> Vec<ReportBucket> {
        let store = self.store.read().unwrap();
        let mut buckets: BTreeMap<(String, String), u64> = BTreeMap::new();
        for e in &store.events {
            if from.is_some_and(|f| e.timestamp < f) || to.is_some_and(|t| e.timestamp >= t) {
                continue;
            }
            *buckets.entry((day_of(e.timestamp), e.event_type.clone())).or_default() += 1;
        }
        buckets
            .into_iter()
            .map(|((day, event_type), count)| ReportBucket { day, event_type, count })
            .collect()
    }
}

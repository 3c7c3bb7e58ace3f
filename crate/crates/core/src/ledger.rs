//! Append-only hash-calendar ledger.
//!
//! Digests are queued into a batch. Sealing a batch builds a Merkle tree over
//! `H(0x00 || digest)` leaves with `H(0x01 || left || right)` interior nodes,
//! promoting an unpaired node to the next level unchanged. Each batch root is
//! chained into the calendar: `head_n = H(head_{n-1} || root_n)` with
//! `head_0 = H(GENESIS_TAG)`. Batch ids start at 1; batch 0 is genesis.
//!
//! Only digests are ever stored. Persistence is a fixed-width record log plus
//! a newline-delimited hex head file; opening a directory replays the log and
//! re-derives every head.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::encoding::hex_bytes;
use crate::{sha256, WIRE_VERSION};

pub const GENESIS_TAG: &[u8] = b"DIPA-LEDGER-GENESIS-v1";
pub const LEAF_TAG: u8 = 0x00;
pub const NODE_TAG: u8 = 0x01;

const RECORD_LEN: usize = 41;
const RECORD_ENTRY: u8 = 0x00;
const RECORD_SEAL: u8 = 0x01;
const LOG_FILE: &str = "ledger.log";
const HEADS_FILE: &str = "heads.txt";

pub type Hash32 = [u8; 32];

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("digest must be 32 bytes, got {0}")]
    InvalidDigest(usize),
    #[error("current batch is empty")]
    EmptyBatch,
    #[error("no entry with seq {0}")]
    UnknownSeq(u64),
    #[error("ledger storage is corrupt: {0}")]
    Corrupt(String),
    #[error("ledger I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum InclusionRejection {
    #[error("path does not fold to the batch root")]
    PathMismatch,
    #[error("batch is not covered by the known heads")]
    UnknownBatch,
    #[error("batch root is not committed by the calendar chain")]
    ChainMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ConsistencyError {
    #[error("old head is newer than new head")]
    InvalidRange,
    #[error("expected {expected} intermediate roots, got {supplied}")]
    IncompleteEvidence { expected: u64, supplied: usize },
    #[error("replayed chain does not reach the new head")]
    Mismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// One sibling on the path from a leaf to the batch root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    #[serde(with = "hex_bytes")]
    pub hash: Hash32,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub v: u8,
    #[serde(with = "hex_bytes")]
    pub leaf: Hash32,
    pub path: Vec<PathStep>,
    #[serde(with = "hex_bytes")]
    pub root: Hash32,
    pub batch: u64,
    #[serde(with = "hex_bytes")]
    pub head: Hash32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarHead {
    pub batch_id: u64,
    #[serde(with = "hex_bytes")]
    pub head: Hash32,
}

impl CalendarHead {
    pub fn genesis() -> Self {
        Self { batch_id: 0, head: genesis_head() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: u64,
    #[serde(with = "hex_bytes")]
    pub digest: Hash32,
    pub batch_id: u64,
    pub leaf_index: u32,
}

/// Returned by [`Ledger::append`]; the batch is still open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppendReceipt {
    pub seq: u64,
    pub batch_id: u64,
    pub leaf_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBatch {
    pub batch_id: u64,
    pub root: Hash32,
    pub head: CalendarHead,
    /// `(seq, proof)` for every entry of the batch, in leaf order.
    pub proofs: Vec<(u64, InclusionProof)>,
}

pub fn genesis_head() -> Hash32 {
    sha256(&[GENESIS_TAG])
}

pub fn leaf_hash(digest: &Hash32) -> Hash32 {
    sha256(&[&[LEAF_TAG], digest])
}

pub fn node_hash(left: &Hash32, right: &Hash32) -> Hash32 {
    sha256(&[&[NODE_TAG], left, right])
}

pub fn chain_head(previous: &Hash32, root: &Hash32) -> Hash32 {
    sha256(&[previous, root])
}

/// All tree levels, leaf hashes first, root level last.
fn tree_levels(digests: &[Hash32]) -> Vec<Vec<Hash32>> {
    let mut levels = vec![digests.iter().map(leaf_hash).collect::<Vec<_>>()];
    while levels.last().map_or(false, |l| l.len() > 1) {
        let next = levels
            .last()
            .unwrap()
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => node_hash(l, r),
                [single] => *single,
                _ => unreachable!(),
            })
            .collect();
        levels.push(next);
    }
    levels
}

pub fn merkle_root(digests: &[Hash32]) -> Option<Hash32> {
    if digests.is_empty() {
        return None;
    }
    tree_levels(digests).last().map(|l| l[0])
}

fn path_from_levels(levels: &[Vec<Hash32>], mut index: usize) -> Vec<PathStep> {
    let mut path = Vec::new();
    for level in &levels[..levels.len() - 1] {
        let sibling = index ^ 1;
        if sibling < level.len() {
            let side = if index % 2 == 0 { Side::Right } else { Side::Left };
            path.push(PathStep { hash: level[sibling], side });
        }
        index /= 2;
    }
    path
}

pub fn merkle_path(digests: &[Hash32], index: usize) -> Option<Vec<PathStep>> {
    (index < digests.len()).then(|| path_from_levels(&tree_levels(digests), index))
}

/// Folds a leaf digest through its path.
pub fn fold_path(leaf: &Hash32, path: &[PathStep]) -> Hash32 {
    path.iter().fold(leaf_hash(leaf), |acc, step| match step.side {
        Side::Left => node_hash(&step.hash, &acc),
        Side::Right => node_hash(&acc, &step.hash),
    })
}

/// Accepts iff `proof.path` folds to `proof.root` and the root is chained into
/// `known_heads` at `proof.batch`.
pub fn verify_inclusion(proof: &InclusionProof, known_heads: &[CalendarHead]) -> Result<(), InclusionRejection> {
    if fold_path(&proof.leaf, &proof.path) != proof.root {
        return Err(InclusionRejection::PathMismatch);
    }
    if proof.batch == 0 {
        return Err(InclusionRejection::UnknownBatch);
    }
    let find = |id: u64| known_heads.iter().find(|h| h.batch_id == id);
    let (Some(previous), Some(current)) = (find(proof.batch - 1), find(proof.batch)) else {
        return Err(InclusionRejection::UnknownBatch);
    };
    if chain_head(&previous.head, &proof.root) != current.head || proof.head != current.head {
        return Err(InclusionRejection::ChainMismatch);
    }
    Ok(())
}

/// Accepts iff replaying the chain from `old` over `roots` yields `new`.
pub fn consistency(old: &CalendarHead, new: &CalendarHead, roots: &[Hash32]) -> Result<(), ConsistencyError> {
    if old.batch_id > new.batch_id {
        return Err(ConsistencyError::InvalidRange);
    }
    let expected = new.batch_id - old.batch_id;
    if roots.len() as u64 != expected {
        return Err(ConsistencyError::IncompleteEvidence { expected, supplied: roots.len() });
    }
    let replayed = roots.iter().fold(old.head, |head, root| chain_head(&head, root));
    if replayed != new.head {
        return Err(ConsistencyError::Mismatch);
    }
    Ok(())
}

/// One lowercase-hex head per line, genesis first.
pub fn export_heads(heads: &[CalendarHead]) -> String {
    heads.iter().map(|h| format!("{}\n", hex::encode(h.head))).collect()
}

/// Inverse of [`export_heads`]; line `n` is the head of batch `n`.
pub fn parse_heads(text: &str) -> Result<Vec<CalendarHead>, LedgerError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            crate::encoding::hex32(line.trim())
                .map(|head| CalendarHead { batch_id: i as u64, head })
                .ok_or_else(|| LedgerError::Corrupt(format!("bad head on line {}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct LedgerConfig {
    pub max_batch: usize,
    pub max_age: Duration,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self { max_batch: 64, max_age: Duration::from_secs(1) }
    }
}

#[derive(Debug)]
struct Batch {
    first_seq: u64,
    digests: Vec<Hash32>,
    levels: Vec<Vec<Hash32>>,
    head: Hash32,
}

impl Batch {
    fn root(&self) -> Hash32 {
        self.levels.last().expect("sealed batches are non-empty")[0]
    }
}

#[derive(Debug, Default)]
struct State {
    next_seq: u64,
    pending: Vec<Hash32>,
    pending_since: Option<Instant>,
    batches: Vec<Batch>,
}

impl State {
    fn current_head(&self) -> Hash32 {
        self.batches.last().map_or_else(genesis_head, |b| b.head)
    }

    fn heads(&self) -> Vec<CalendarHead> {
        std::iter::once(CalendarHead::genesis())
            .chain(
                self.batches
                    .iter()
                    .enumerate()
                    .map(|(i, b)| CalendarHead { batch_id: i as u64 + 1, head: b.head }),
            )
            .collect()
    }

    fn seal(&mut self) -> Option<&Batch> {
        if self.pending.is_empty() {
            return None;
        }
        let digests = std::mem::take(&mut self.pending);
        self.pending_since = None;
        let levels = tree_levels(&digests);
        let root = levels.last().unwrap()[0];
        let head = chain_head(&self.current_head(), &root);
        let first_seq = self.next_seq - digests.len() as u64;
        self.batches.push(Batch { first_seq, digests, levels, head });
        self.batches.last()
    }

    fn proof(&self, batch_index: usize, leaf_index: usize) -> InclusionProof {
        let batch = &self.batches[batch_index];
        InclusionProof {
            v: WIRE_VERSION,
            leaf: batch.digests[leaf_index],
            path: path_from_levels(&batch.levels, leaf_index),
            root: batch.root(),
            batch: batch_index as u64 + 1,
            head: batch.head,
        }
    }

    fn locate(&self, seq: u64) -> Option<(usize, usize)> {
        let idx = self.batches.partition_point(|b| b.first_seq <= seq);
        let batch = self.batches.get(idx.checked_sub(1)?)?;
        let offset = (seq - batch.first_seq) as usize;
        (offset < batch.digests.len()).then_some((idx - 1, offset))
    }
}

#[derive(Debug)]
struct Store {
    log: File,
    heads: File,
}

impl Store {
    fn write_record(&mut self, tag: u8, number: u64, hash: &Hash32) -> std::io::Result<()> {
        let mut record = [0u8; RECORD_LEN];
        record[0] = tag;
        record[1..9].copy_from_slice(&number.to_be_bytes());
        record[9..].copy_from_slice(hash);
        self.log.write_all(&record)
    }
}

/// The ledger. Appends and seals serialize on a single writer lock; proof and
/// head reads share a read lock.
#[derive(Debug)]
pub struct Ledger {
    config: LedgerConfig,
    state: RwLock<State>,
    store: Option<Mutex<Store>>,
    dir: Option<PathBuf>,
}

impl Ledger {
    pub fn in_memory(config: LedgerConfig) -> Self {
        Self { config, state: RwLock::new(State::default()), store: None, dir: None }
    }

    /// Opens (or creates) a persistent ledger in `dir`, replaying the log.
    pub fn open(dir: impl AsRef<Path>, config: LedgerConfig) -> Result<Self, LedgerError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let log_path = dir.join(LOG_FILE);
        let heads_path = dir.join(HEADS_FILE);

        let mut raw = Vec::new();
        if log_path.exists() {
            File::open(&log_path)?.read_to_end(&mut raw)?;
        }
        let complete = raw.len() - raw.len() % RECORD_LEN;
        let mut state = State::default();
        for record in raw[..complete].chunks_exact(RECORD_LEN) {
            let number = u64::from_be_bytes(record[1..9].try_into().unwrap());
            let hash: Hash32 = record[9..].try_into().unwrap();
            match record[0] {
                RECORD_ENTRY => {
                    if number != state.next_seq {
                        return Err(LedgerError::Corrupt(format!("seq gap at {number}")));
                    }
                    state.next_seq += 1;
                    state.pending.push(hash);
                }
                RECORD_SEAL => {
                    let expected = state.batches.len() as u64 + 1;
                    let batch = state
                        .seal()
                        .ok_or_else(|| LedgerError::Corrupt(format!("empty batch {number}")))?;
                    if number != expected || batch.root() != hash {
                        return Err(LedgerError::Corrupt(format!("batch {number} root mismatch")));
                    }
                }
                tag => return Err(LedgerError::Corrupt(format!("unknown record tag {tag}"))),
            }
        }
        if !state.pending.is_empty() {
            state.pending_since = Some(Instant::now());
        }

        let derived = export_heads(&state.heads());
        let published = std::fs::read_to_string(&heads_path).unwrap_or_default();
        if !derived.starts_with(&published) {
            return Err(LedgerError::Corrupt("head file disagrees with log".into()));
        }
        std::fs::write(&heads_path, &derived)?;

        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        log.set_len(complete as u64)?;
        let heads = OpenOptions::new().append(true).open(&heads_path)?;
        Ok(Self {
            config,
            state: RwLock::new(state),
            store: Some(Mutex::new(Store { log, heads })),
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn config(&self) -> LedgerConfig {
        self.config
    }

    /// Directory holding the persisted log, if any.
    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Queues a digest; seals immediately when the batch reaches `max_batch`.
    pub fn append(&self, digest: &[u8]) -> Result<AppendReceipt, LedgerError> {
        let digest: Hash32 = digest.try_into().map_err(|_| LedgerError::InvalidDigest(digest.len()))?;
        let mut state = self.state.write().expect("ledger lock poisoned");
        let receipt = AppendReceipt {
            seq: state.next_seq,
            batch_id: state.batches.len() as u64 + 1,
            leaf_index: state.pending.len() as u32,
        };
        if let Some(store) = &self.store {
            store.lock().expect("store lock poisoned").write_record(RECORD_ENTRY, receipt.seq, &digest)?;
        }
        state.next_seq += 1;
        state.pending.push(digest);
        state.pending_since.get_or_insert_with(Instant::now);
        if state.pending.len() >= self.config.max_batch {
            self.seal_locked(&mut state)?;
        }
        Ok(receipt)
    }

    pub fn seal_batch(&self) -> Result<SealedBatch, LedgerError> {
        let mut state = self.state.write().expect("ledger lock poisoned");
        self.seal_locked(&mut state)
    }

    /// Seals the open batch if its oldest entry is at least `max_age` old.
    pub fn seal_if_due(&self, now: Instant) -> Result<Option<SealedBatch>, LedgerError> {
        let mut state = self.state.write().expect("ledger lock poisoned");
        match state.pending_since {
            Some(since) if now.duration_since(since) >= self.config.max_age => self.seal_locked(&mut state).map(Some),
            _ => Ok(None),
        }
    }

    fn seal_locked(&self, state: &mut State) -> Result<SealedBatch, LedgerError> {
        let batch = state.seal().ok_or(LedgerError::EmptyBatch)?;
        let (root, head, first_seq, len) = (batch.root(), batch.head, batch.first_seq, batch.digests.len());
        let batch_id = state.batches.len() as u64;
        if let Some(store) = &self.store {
            let mut store = store.lock().expect("store lock poisoned");
            store.write_record(RECORD_SEAL, batch_id, &root)?;
            writeln!(store.heads, "{}", hex::encode(head))?;
        }
        let index = state.batches.len() - 1;
        let proofs = (0..len).map(|i| (first_seq + i as u64, state.proof(index, i))).collect();
        Ok(SealedBatch { batch_id, root, head: CalendarHead { batch_id, head }, proofs })
    }

    pub fn heads(&self) -> Vec<CalendarHead> {
        self.state.read().expect("ledger lock poisoned").heads()
    }

    pub fn latest_head(&self) -> CalendarHead {
        let state = self.state.read().expect("ledger lock poisoned");
        CalendarHead { batch_id: state.batches.len() as u64, head: state.current_head() }
    }

    /// Inclusion proof for `seq`; `Ok(None)` while its batch is still open.
    pub fn proof(&self, seq: u64) -> Result<Option<InclusionProof>, LedgerError> {
        let state = self.state.read().expect("ledger lock poisoned");
        if seq >= state.next_seq {
            return Err(LedgerError::UnknownSeq(seq));
        }
        Ok(state.locate(seq).map(|(b, l)| state.proof(b, l)))
    }

    pub fn entry(&self, seq: u64) -> Option<LedgerEntry> {
        let state = self.state.read().expect("ledger lock poisoned");
        if let Some((b, l)) = state.locate(seq) {
            return Some(LedgerEntry {
                seq,
                digest: state.batches[b].digests[l],
                batch_id: b as u64 + 1,
                leaf_index: l as u32,
            });
        }
        let first_pending = state.next_seq - state.pending.len() as u64;
        (first_pending..state.next_seq).contains(&seq).then(|| {
            let l = (seq - first_pending) as usize;
            LedgerEntry { seq, digest: state.pending[l], batch_id: state.batches.len() as u64 + 1, leaf_index: l as u32 }
        })
    }

    /// Batch roots for batches `from + 1 ..= to`.
    pub fn roots_between(&self, from: u64, to: u64) -> Vec<Hash32> {
        let state = self.state.read().expect("ledger lock poisoned");
        state
            .batches
            .iter()
            .enumerate()
            .filter(|(i, _)| (from + 1..=to).contains(&(*i as u64 + 1)))
            .map(|(_, b)| b.root())
            .collect()
    }

    pub fn len(&self) -> u64 {
        self.state.read().expect("ledger lock poisoned").next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pending_len(&self) -> usize {
        self.state.read().expect("ledger lock poisoned").pending.len()
    }
}

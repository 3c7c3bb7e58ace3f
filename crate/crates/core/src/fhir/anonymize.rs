//! Pseudonymized export of observations for health-organization logging.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use zeroize::Zeroizing;

use super::terminology;
use super::{CanonicalObservation, ObservationKind, ObservationResult};

pub const DEFAULT_EPOCH_SECONDS: i64 = 30 * 24 * 3600;
pub const PSEUDONYM_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnonymizedRecord {
    #[serde(with = "crate::encoding::hex_bytes")]
    pub pseudonym: [u8; PSEUDONYM_LEN],
    pub kind: ObservationKind,
    pub result: ObservationResult,
    /// `YYYY-MM-DD`, UTC.
    pub effective_date: String,
    pub region: String,
}

pub fn pseudonym(org_key: &[u8; 32], patient_ref: &str) -> [u8; PSEUDONYM_LEN] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(org_key).expect("hmac takes any key length");
    mac.update(patient_ref.as_bytes());
    let tag = mac.finalize().into_bytes();
    let mut out = [0u8; PSEUDONYM_LEN];
    out.copy_from_slice(&tag[..PSEUDONYM_LEN]);
    out
}

pub fn anonymize(obs: &CanonicalObservation, patient_ref: &str, org_key: &[u8; 32]) -> AnonymizedRecord {
    AnonymizedRecord {
        pseudonym: pseudonym(org_key, patient_ref),
        kind: obs.kind,
        result: obs.result,
        effective_date: obs.effective_date(),
        region: terminology::region_for(&obs.performer).to_string(),
    }
}

/// Per-organization pseudonym keys, rotated every `epoch_seconds` of
/// (simulated) time. Keys derive from one secret so no key material
/// accumulates.
pub struct OrgKeyring {
    secret: Zeroizing<[u8; 32]>,
    epoch_seconds: i64,
}

impl std::fmt::Debug for OrgKeyring {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OrgKeyring").field("epoch_seconds", &self.epoch_seconds).finish_non_exhaustive()
    }
}

impl OrgKeyring {
    pub fn new(secret: [u8; 32], epoch_seconds: i64) -> Self {
        Self { secret: Zeroizing::new(secret), epoch_seconds: epoch_seconds.max(1) }
    }

    pub fn epoch(&self, now: i64) -> i64 {
        now.div_euclid(self.epoch_seconds)
    }

    pub fn key(&self, org: &str, now: i64) -> [u8; 32] {
        let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&self.secret[..]).expect("hmac takes any key length");
        mac.update(b"dipa-pseudonym-key-v1");
        mac.update(org.as_bytes());
        mac.update(&[0x1f]);
        mac.update(&self.epoch(now).to_be_bytes());
        mac.finalize().into_bytes().into()
    }
}

/// Appends one NDJSON line per record to `<dir>/<org>.ndjson`.
#[derive(Debug, Clone)]
pub struct AnonymizedExport {
    dir: PathBuf,
}

impl AnonymizedExport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, org: &str) -> PathBuf {
        let safe: String = org
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        self.dir.join(format!("{safe}.ndjson"))
    }

    pub fn append(&self, org: &str, record: &AnonymizedRecord) -> std::io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let mut line = serde_json::to_vec(record).map_err(std::io::Error::other)?;
        line.push(b'\n');
        let mut file = OpenOptions::new().create(true).append(true).open(self.path_for(org))?;
        file.write_all(&line)
    }

    pub fn read(path: &Path) -> std::io::Result<Vec<AnonymizedRecord>> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        text.lines()
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
            .collect()
    }
}

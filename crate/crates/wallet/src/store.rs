//! Encrypted wallet container.
//!
//! File layout: magic `DIPAWLT`, version byte, Argon2id memory (KiB),
//! iterations and lanes as little-endian `u32`, 16-byte salt, 24-byte
//! nonce, then the XChaCha20-Poly1305 ciphertext of the JSON body. The whole
//! header is bound as associated data. The store is held under an exclusive
//! lock on `<path>.lock` for as long as it is open.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use argon2::{Algorithm, Argon2, Params, Version};
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use dipa_core::encoding::b64;
use dipa_core::fhir::AccessToken;
use dipa_core::ledger::AppendReceipt;
use dipa_core::vc::HeldCredential;
use dipa_core::Did;
use ed25519_dalek::SigningKey;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use zeroize::{Zeroize, Zeroizing};

pub const MAGIC: &[u8; 7] = b"DIPAWLT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 7 + 1 + 12 + 16 + 24;
const MAX_MEMORY_KIB: u32 = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("wallet {0} is open in another process")]
    WalletLocked(PathBuf),
    #[error("wrong passphrase or damaged wallet")]
    DecryptFailed,
    #[error("not a wallet file: {0}")]
    Format(String),
    #[error("wallet {0} already exists")]
    Exists(PathBuf),
    #[error("wallet {0} does not exist")]
    Missing(PathBuf),
    #[error("key derivation: {0}")]
    Kdf(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Argon2id cost parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KdfParams {
    pub memory_kib: u32,
    pub iterations: u32,
    pub lanes: u32,
}

impl Default for KdfParams {
    /// 64 MiB, 3 passes, 1 lane.
    fn default() -> Self {
        Self { memory_kib: 64 * 1024, iterations: 3, lanes: 1 }
    }
}

impl KdfParams {
    fn derive(&self, passphrase: &[u8], salt: &[u8; 16]) -> Result<Zeroizing<[u8; 32]>, StoreError> {
        if self.memory_kib > MAX_MEMORY_KIB {
            return Err(StoreError::Format(format!("memory cost {} KiB out of range", self.memory_kib)));
        }
        let params =
            Params::new(self.memory_kib, self.iterations, self.lanes, Some(32)).map_err(|e| StoreError::Kdf(e.to_string()))?;
        let mut key = Zeroizing::new([0u8; 32]);
        Argon2::new(Algorithm::Argon2id, Version::V0x13, params)
            .hash_password_into(passphrase, salt, key.as_mut())
            .map_err(|e| StoreError::Kdf(e.to_string()))?;
        Ok(key)
    }
}

/// Holder signing key, authenticator and its server registration.
#[derive(Clone, Serialize, Deserialize)]
pub struct HolderKeys {
    pub did: Did,
    #[serde(with = "b64")]
    pub signing_key: [u8; 32],
    #[serde(with = "b64")]
    pub authenticator_key: [u8; 32],
    #[serde(with = "b64")]
    pub credential_id: [u8; 16],
    pub counter: u64,
}

impl HolderKeys {
    pub fn generate() -> Self {
        let key = SigningKey::generate(&mut OsRng);
        let authenticator = SigningKey::generate(&mut OsRng);
        Self {
            did: Did::from_verifying_key(&key.verifying_key()),
            signing_key: key.to_bytes(),
            authenticator_key: authenticator.to_bytes(),
            credential_id: [0; 16],
            counter: 0,
        }
    }

    pub fn signing_key(&self) -> SigningKey {
        SigningKey::from_bytes(&self.signing_key)
    }

    pub fn authenticator(&self) -> SigningKey {
        SigningKey::from_bytes(&self.authenticator_key)
    }
}

impl Drop for HolderKeys {
    fn drop(&mut self) {
        self.signing_key.zeroize();
        self.authenticator_key.zeroize();
    }
}

impl std::fmt::Debug for HolderKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HolderKeys").field("did", &self.did).field("counter", &self.counter).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredCredential {
    /// Source observation for status credentials.
    pub observation_id: Option<String>,
    pub credential: HeldCredential,
    pub receipt: AppendReceipt,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WalletData {
    pub holder: Option<HolderKeys>,
    pub identity: Option<StoredCredential>,
    pub credentials: Vec<StoredCredential>,
    pub token: Option<AccessToken>,
    /// OAuth client the token was issued to.
    pub ehr_client: Option<String>,
}

pub struct WalletStore {
    path: PathBuf,
    params: KdfParams,
    salt: [u8; 16],
    key: Zeroizing<[u8; 32]>,
    saved: Zeroizing<Vec<u8>>,
    data: WalletData,
    _lock: File,
}

impl std::fmt::Debug for WalletStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WalletStore").field("path", &self.path).field("params", &self.params).finish_non_exhaustive()
    }
}

fn lock_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".lock");
    PathBuf::from(name)
}

fn acquire(path: &Path) -> Result<File, StoreError> {
    let file = OpenOptions::new().create(true).truncate(false).write(true).open(lock_path(path))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(fs::TryLockError::WouldBlock) => Err(StoreError::WalletLocked(path.to_path_buf())),
        Err(fs::TryLockError::Error(e)) => Err(e.into()),
    }
}

fn header(params: &KdfParams, salt: &[u8; 16], nonce: &[u8; 24]) -> Vec<u8> {
    let mut h = Vec::with_capacity(HEADER_LEN);
    h.extend_from_slice(MAGIC);
    h.push(VERSION);
    for v in [params.memory_kib, params.iterations, params.lanes] {
        h.extend_from_slice(&v.to_le_bytes());
    }
    h.extend_from_slice(salt);
    h.extend_from_slice(nonce);
    h
}

struct Parsed<'a> {
    params: KdfParams,
    salt: [u8; 16],
    nonce: [u8; 24],
    header: &'a [u8],
    ciphertext: &'a [u8],
}

fn parse(bytes: &[u8]) -> Result<Parsed<'_>, StoreError> {
    if bytes.len() < HEADER_LEN + 16 || &bytes[..7] != MAGIC {
        return Err(StoreError::Format("bad magic or truncated".into()));
    }
    if bytes[7] != VERSION {
        return Err(StoreError::Format(format!("unsupported version {}", bytes[7])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    Ok(Parsed {
        params: KdfParams { memory_kib: word(0), iterations: word(1), lanes: word(2) },
        salt: bytes[20..36].try_into().unwrap(),
        nonce: bytes[36..60].try_into().unwrap(),
        header: &bytes[..HEADER_LEN],
        ciphertext: &bytes[HEADER_LEN..],
    })
}

impl WalletStore {
    pub fn exists(path: &Path) -> bool {
        path.is_file()
    }

    /// New empty wallet; nothing is written until [`WalletStore::save`].
    pub fn create(path: impl Into<PathBuf>, passphrase: &str, params: KdfParams) -> Result<Self, StoreError> {
        let path = path.into();
        let lock = acquire(&path)?;
        if path.exists() {
            return Err(StoreError::Exists(path));
        }
        let mut salt = [0u8; 16];
        OsRng.fill_bytes(&mut salt);
        let key = params.derive(passphrase.as_bytes(), &salt)?;
        Ok(Self { path, params, salt, key, saved: Zeroizing::new(Vec::new()), data: WalletData::default(), _lock: lock })
    }

    pub fn open(path: impl Into<PathBuf>, passphrase: &str) -> Result<Self, StoreError> {
        let path = path.into();
        let lock = acquire(&path)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::Missing(path)),
            Err(e) => return Err(e.into()),
        };
        let p = parse(&bytes)?;
        let key = p.params.derive(passphrase.as_bytes(), &p.salt)?;
        let plain = XChaCha20Poly1305::new(key.as_ref().into())
            .decrypt(XNonce::from_slice(&p.nonce), Payload { msg: p.ciphertext, aad: p.header })
            .map_err(|_| StoreError::DecryptFailed)?;
        let plain = Zeroizing::new(plain);
        let data = serde_json::from_slice(&plain).map_err(|e| StoreError::Format(e.to_string()))?;
        Ok(Self { path, params: p.params, salt: p.salt, key, saved: plain, data, _lock: lock })
    }

    pub fn open_or_create(path: impl Into<PathBuf>, passphrase: &str, params: KdfParams) -> Result<Self, StoreError> {
        let path = path.into();
        if Self::exists(&path) {
            Self::open(path, passphrase)
        } else {
            Self::create(path, passphrase, params)
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn params(&self) -> KdfParams {
        self.params
    }

    pub fn data(&self) -> &WalletData {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut WalletData {
        &mut self.data
    }

    /// Encrypts and atomically replaces the file when the contents changed.
    /// Returns whether anything was written.
    pub fn save(&mut self) -> Result<bool, StoreError> {
        let plain = Zeroizing::new(serde_json::to_vec(&self.data).expect("wallet serializes"));
        if *plain == *self.saved && self.path.exists() {
            return Ok(false);
        }
        let mut nonce = [0u8; 24];
        OsRng.fill_bytes(&mut nonce);
        let mut out = header(&self.params, &self.salt, &nonce);
        let ciphertext = XChaCha20Poly1305::new(self.key.as_ref().into())
            .encrypt(XNonce::from_slice(&nonce), Payload { msg: &plain, aad: &out })
            .map_err(|_| StoreError::Kdf("encryption failed".into()))?;
        out.extend_from_slice(&ciphertext);

        let mut tmp = self.path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        let mut opts = OpenOptions::new();
        opts.create(true).write(true).truncate(true);
        #[cfg(unix)]
        std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
        let mut f = opts.open(&tmp)?;
        f.write_all(&out)?;
        f.sync_all()?;
        fs::rename(&tmp, &self.path)?;
        self.saved = plain;
        Ok(true)
    }
}

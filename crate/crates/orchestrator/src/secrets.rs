//! File-backed secrets store: one random value per file, created on first
//! use with owner-only permissions.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::RngCore;
use zeroize::Zeroizing;

pub const ISSUER_KEY: &str = "issuer-ed25519.key";
pub const PSEUDONYM_SECRET: &str = "pseudonym.secret";
pub const AUDIT_SECRET: &str = "audit-actor.secret";

#[derive(Debug, thiserror::Error)]
pub enum SecretError {
    #[error("secret {name}: expected {expected} bytes, found {found}")]
    Length { name: String, expected: usize, found: usize },
    #[error("secret store: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct FileSecrets {
    dir: PathBuf,
}

impl FileSecrets {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, SecretError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Returns the stored `N`-byte secret, generating it if absent.
    pub fn load_or_create<const N: usize>(&self, name: &str) -> Result<Zeroizing<[u8; N]>, SecretError> {
        let path = self.path(name);
        let mut out = Zeroizing::new([0u8; N]);
        match fs::read(&path) {
            Ok(bytes) => {
                let bytes = Zeroizing::new(bytes);
                if bytes.len() != N {
                    return Err(SecretError::Length { name: name.into(), expected: N, found: bytes.len() });
                }
                out.copy_from_slice(&bytes);
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                rand::rngs::OsRng.fill_bytes(out.as_mut());
                let mut opts = fs::OpenOptions::new();
                opts.write(true).create_new(true);
                #[cfg(unix)]
                std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
                opts.open(&path)?.write_all(out.as_ref())?;
            }
            Err(e) => return Err(e.into()),
        }
        Ok(out)
    }
}

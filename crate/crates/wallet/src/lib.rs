//! Holder and verifier client for the passport server: an encrypted local
//! store plus the commands behind the `wallet` binary.

pub mod client;
pub mod commands;
pub mod store;

use std::path::PathBuf;

use serde::Deserialize;

pub use client::{Client, ClientError};
pub use commands::Wallet;
pub use store::{KdfParams, StoreError, WalletStore};

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:8700";
pub const DEFAULT_STORE: &str = "wallet.dipa";

/// Process exit codes, stable across commands.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const VETTING_REJECTED: u8 = 2;
    pub const DECRYPT_FAILED: u8 = 3;
    pub const NETWORK: u8 = 4;
    pub const VERIFY_REJECTED: u8 = 5;
    pub const WALLET_LOCKED: u8 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum WalletError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("no passphrase given (use --passphrase or DIPA_WALLET_PASSPHRASE)")]
    NoPassphrase,
    #[error("{0}")]
    Network(String),
    #[error("onboarding rejected: {code}")]
    Rejected { code: String, reasons: Vec<String> },
    #[error(transparent)]
    Server(ClientError),
    #[error(transparent)]
    Credential(#[from] dipa_core::vc::CredentialError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl From<ClientError> for WalletError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Network(m) => WalletError::Network(m),
            other => WalletError::Server(other),
        }
    }
}

impl WalletError {
    pub fn exit_code(&self) -> u8 {
        match self {
            WalletError::Store(StoreError::DecryptFailed) => exit::DECRYPT_FAILED,
            WalletError::Store(StoreError::WalletLocked(_)) | WalletError::NoPassphrase => exit::WALLET_LOCKED,
            WalletError::Network(_) => exit::NETWORK,
            WalletError::Rejected { .. } => exit::VETTING_REJECTED,
            _ => exit::FAILURE,
        }
    }

    /// Short machine-readable name.
    pub fn code(&self) -> String {
        match self {
            WalletError::Store(StoreError::DecryptFailed) => "DecryptFailed".into(),
            WalletError::Store(StoreError::WalletLocked(_)) | WalletError::NoPassphrase => "WalletLocked".into(),
            WalletError::Store(StoreError::Missing(_)) => "NoWallet".into(),
            WalletError::Store(_) => "StoreError".into(),
            WalletError::Network(_) => "NetworkError".into(),
            WalletError::Rejected { code, .. } => code.clone(),
            WalletError::Server(e) => e.code().unwrap_or("BadResponse").into(),
            WalletError::Credential(_) => "CredentialError".into(),
            WalletError::Usage(_) => "Usage".into(),
            WalletError::Io { .. } => "IoError".into(),
        }
    }

    pub fn reasons(&self) -> &[String] {
        match self {
            WalletError::Rejected { reasons, .. } => reasons,
            WalletError::Server(ClientError::Api { reasons, .. }) => reasons,
            _ => &[],
        }
    }
}

/// Optional TOML file with defaults for the global flags.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalletConfig {
    pub server: Option<String>,
    pub store: Option<PathBuf>,
}

impl WalletConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, WalletError> {
        let text = std::fs::read_to_string(path).map_err(|source| WalletError::Io { path: path.into(), source })?;
        toml::from_str(&text).map_err(|e| WalletError::Usage(format!("{}: {e}", path.display())))
    }
}

//! Key-derived decentralized identifiers.
//!
//! A [`Did`] is `did:dipa:z<base58btc(0xed 0x01 || ed25519-public-key)>`, the
//! same multibase/multicodec layout `did:key` uses. Resolution is purely
//! local: the identifier *is* the key.

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};

pub const DID_METHOD: &str = "dipa";

const MULTICODEC_ED25519_PUB: [u8; 2] = [0xed, 0x01];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DidError {
    #[error("public key must be 32 bytes, got {0}")]
    InvalidKeyLength(usize),
    #[error("bytes are not a valid Ed25519 public key")]
    InvalidKey,
    #[error("malformed DID: {0}")]
    Malformed(&'static str),
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Did {
    key: [u8; 32],
}

/// Derives the DID for an Ed25519 public key.
pub fn derive_did(public_key: &[u8]) -> Result<Did, DidError> {
    let key: [u8; 32] = public_key
        .try_into()
        .map_err(|_| DidError::InvalidKeyLength(public_key.len()))?;
    VerifyingKey::from_bytes(&key).map_err(|_| DidError::InvalidKey)?;
    Ok(Did { key })
}

impl Did {
    pub fn from_verifying_key(key: &VerifyingKey) -> Self {
        Did { key: key.to_bytes() }
    }

    pub fn public_key_bytes(&self) -> &[u8; 32] {
        &self.key
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        // Construction always validates the point.
        VerifyingKey::from_bytes(&self.key).expect("validated at construction")
    }

    /// The multibase-encoded key identifier after the method tag.
    pub fn key_id(&self) -> String {
        let mut raw = Vec::with_capacity(34);
        raw.extend_from_slice(&MULTICODEC_ED25519_PUB);
        raw.extend_from_slice(&self.key);
        format!("z{}", bs58::encode(raw).into_string())
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "did:{DID_METHOD}:{}", self.key_id())
    }
}

impl fmt::Debug for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Did({self})")
    }
}

impl FromStr for Did {
    type Err = DidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s
            .strip_prefix("did:")
            .and_then(|r| r.strip_prefix(DID_METHOD))
            .and_then(|r| r.strip_prefix(':'))
            .ok_or(DidError::Malformed("unknown method"))?;
        let encoded = rest.strip_prefix('z').ok_or(DidError::Malformed("expected base58btc multibase"))?;
        let raw = bs58::decode(encoded)
            .into_vec()
            .map_err(|_| DidError::Malformed("invalid base58"))?;
        let key = raw
            .strip_prefix(&MULTICODEC_ED25519_PUB[..])
            .ok_or(DidError::Malformed("not an ed25519 multicodec key"))?;
        derive_did(key)
    }
}

impl TryFrom<String> for Did {
    type Error = DidError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Did> for String {
    fn from(did: Did) -> Self {
        did.to_string()
    }
}

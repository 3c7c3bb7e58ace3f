//! Serde adapters for binary fields.
//!
//! Credentials, presentations and envelopes carry binary values as base64url
//! without padding. Ledger artifacts use lowercase hex. Both decoders are
//! strict: a value has exactly one accepted textual form.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;

pub fn b64_encode(bytes: impl AsRef<[u8]>) -> String {
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn b64_decode(text: &str) -> Result<Vec<u8>, base64::DecodeError> {
    URL_SAFE_NO_PAD.decode(text)
}

/// Lowercase-only hex decoding.
pub fn hex_decode(text: &str) -> Result<Vec<u8>, hex::FromHexError> {
    if text.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err(hex::FromHexError::InvalidHexCharacter {
            c: text.chars().find(|c| c.is_ascii_uppercase()).unwrap_or('?'),
            index: text.find(|c: char| c.is_ascii_uppercase()).unwrap_or(0),
        });
    }
    hex::decode(text)
}

pub fn hex32(text: &str) -> Option<[u8; 32]> {
    hex_decode(text).ok()?.try_into().ok()
}

/// `#[serde(with = "b64")]` for `Vec<u8>` and fixed-size byte arrays.
pub mod b64 {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S, T>(value: &T, serializer: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        T: AsRef<[u8]>,
    {
        serializer.serialize_str(&super::b64_encode(value))
    }

    pub fn deserialize<'de, D, T>(deserializer: D) -> Result<T, D::Error>
    where
        D: Deserializer<'de>,
        T: TryFrom<Vec<u8>>,
    {
        let text = String::deserialize(deserializer)?;
        let bytes = super::b64_decode(&text).map_err(D::Error::custom)?;
        let len = bytes.len();
        T::try_from(bytes).map_err(|_| D::Error::custom(format!("unexpected byte length {len}")))
    }
}

/// `#[serde(with = "hex_bytes")]` for 32-byte digests.
pub mod hex_bytes {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S, T>(value: &T, serializer: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        T: AsRef<[u8]>,
    {
        serializer.serialize_str(&hex::encode(value))
    }

    pub fn deserialize<'de, D, T>(deserializer: D) -> Result<T, D::Error>
    where
        D: Deserializer<'de>,
        T: TryFrom<Vec<u8>>,
    {
        let text = String::deserialize(deserializer)?;
        let bytes = super::hex_decode(&text).map_err(D::Error::custom)?;
        let len = bytes.len();
        T::try_from(bytes).map_err(|_| D::Error::custom(format!("unexpected byte length {len}")))
    }
}

//! Canonical JSON: object keys sorted bytewise, no insignificant whitespace,
//! UTF-8, integers only.
//!
//! Values are routed through [`serde_json::Value`], whose object map is a
//! `BTreeMap`, so struct field order never leaks into the byte form.

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CanonicalError {
    #[error("malformed JSON: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("input is not in canonical form")]
    NotCanonical,
}

/// Canonical bytes of any serializable value.
///
/// Panics only if `value` contains a map with non-string keys, which none of
/// the wire types in this crate do.
pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let tree = serde_json::to_value(value).expect("wire types serialize to JSON");
    serde_json::to_vec(&tree).expect("JSON values always serialize")
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_vec(value)).expect("serde_json emits UTF-8")
}

/// Parses `bytes` and rejects any input that would not re-serialize to the
/// exact same bytes.
pub fn from_slice<T: DeserializeOwned + Serialize>(bytes: &[u8]) -> Result<T, CanonicalError> {
    let value: T = serde_json::from_slice(bytes)?;
    if to_vec(&value) != bytes {
        return Err(CanonicalError::NotCanonical);
    }
    Ok(value)
}

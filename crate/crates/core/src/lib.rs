//! Core primitives for a digital immunity passport service.
//!
//! The crate is split along the trust boundaries of the system:
//!
//! - [`vc`] and [`did`]: credential data model, issuance, selective-disclosure
//!   presentations and deterministic key-derived identifiers.
//! - [`ledger`]: Merkle-batched hash calendar with inclusion and consistency proofs.
//! - [`authn`]: FIDO2-style relying party where every payload travels inside a
//!   signed envelope, plus ephemeral session establishment.
//! - [`onboarding`]: MRZ parsing, identity vetting and identity credential minting.
//! - [`fhir`]: mock health-record hub with an OAuth2 code flow, record
//!   rationalization and pseudonymized export.
//! - [`presentation`]: key registry and MAC-sealed QR payloads.
//!
//! Everything here is synchronous and takes the current time as an explicit
//! Unix-seconds argument so that expiry behaviour is testable.

pub mod authn;
pub mod canonical;
pub mod did;
pub mod encoding;
pub mod fhir;
pub mod ledger;
pub mod onboarding;
pub mod presentation;
pub mod vc;

pub use did::Did;

/// Wire format version carried by every top-level envelope.
pub const WIRE_VERSION: u8 = 1;

/// Seconds since the Unix epoch according to the system clock.
pub fn unix_now() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

pub(crate) fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    hasher.finalize().into()
}

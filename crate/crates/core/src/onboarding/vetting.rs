//! Identity vetting against a face-match oracle and an issuing authority.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::mrz::MrzRecord;
use super::OnboardingError;

pub const DEFAULT_FACE_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("face-match oracle unavailable: {0}")]
pub struct OracleError(pub String);

/// Scores how likely two images show the same face, in `[0, 1]`.
pub trait FaceMatcher: Send + Sync {
    fn score(&self, document_photo: &[u8], selfie: &[u8]) -> Result<f64, OracleError>;
}

/// Test double: 1.0 when both images hash identically, 0.0 otherwise.
#[derive(Debug, Default, Clone, Copy)]
pub struct DigestFaceMatcher;

impl FaceMatcher for DigestFaceMatcher {
    fn score(&self, document_photo: &[u8], selfie: &[u8]) -> Result<f64, OracleError> {
        let same = crate::sha256(&[document_photo]) == crate::sha256(&[selfie]);
        Ok(if same { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AuthorityStatus {
    Confirmed,
    NotFound,
    Revoked,
}

pub trait IssuingAuthority: Send + Sync {
    fn status(&self, document_number: &str) -> AuthorityStatus;
}

/// Allow/deny list keyed by document number. Text form, one entry per line:
/// `<document-number> confirmed|revoked`, `#` comments allowed. Anything not
/// listed is `NotFound`.
#[derive(Debug, Clone, Default)]
pub struct MockAuthority {
    entries: HashMap<String, AuthorityStatus>,
}

impl MockAuthority {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, document_number: impl Into<String>, status: AuthorityStatus) -> Self {
        self.entries.insert(document_number.into(), status);
        self
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut authority = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(doc), Some(status), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(format!("line {}: expected `<document> <status>`", n + 1));
            };
            let status = match status.to_ascii_lowercase().as_str() {
                "confirmed" | "allow" => AuthorityStatus::Confirmed,
                "revoked" | "deny" => AuthorityStatus::Revoked,
                other => return Err(format!("line {}: unknown status {other:?}", n + 1)),
            };
            authority.entries.insert(doc.to_string(), status);
        }
        Ok(authority)
    }
}

impl IssuingAuthority for MockAuthority {
    fn status(&self, document_number: &str) -> AuthorityStatus {
        self.entries.get(document_number).copied().unwrap_or(AuthorityStatus::NotFound)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VettingDecision {
    Verified,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VettingReason {
    MrzInvalid,
    FaceMismatch,
    AuthorityNotFound,
    AuthorityRevoked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VettingResult {
    pub face_match_score: f64,
    pub face_threshold: f64,
    pub authority_status: AuthorityStatus,
    pub decision: VettingDecision,
    pub reasons: Vec<VettingReason>,
}

impl VettingResult {
    pub fn is_verified(&self) -> bool {
        self.decision == VettingDecision::Verified
    }
}

/// Runs every check and lists every failure. Only an oracle outage is an
/// error; it is retryable.
pub fn vet_identity(
    mrz: &MrzRecord,
    document_photo: &[u8],
    selfie: &[u8],
    oracle: &dyn FaceMatcher,
    authority: &dyn IssuingAuthority,
    face_threshold: f64,
) -> Result<VettingResult, OnboardingError> {
    let score = oracle
        .score(document_photo, selfie)
        .map_err(|e| OnboardingError::OracleUnavailable(e.0))?
        .clamp(0.0, 1.0);
    let authority_status = authority.status(&mrz.document_number);

    let mut reasons = Vec::new();
    if !mrz.is_consistent() {
        reasons.push(VettingReason::MrzInvalid);
    }
    if score < face_threshold {
        reasons.push(VettingReason::FaceMismatch);
    }
    match authority_status {
        AuthorityStatus::Confirmed => {}
        AuthorityStatus::NotFound => reasons.push(VettingReason::AuthorityNotFound),
        AuthorityStatus::Revoked => reasons.push(VettingReason::AuthorityRevoked),
    }
    let decision = if reasons.is_empty() { VettingDecision::Verified } else { VettingDecision::Rejected };
    Ok(VettingResult { face_match_score: score, face_threshold, authority_status, decision, reasons })
}

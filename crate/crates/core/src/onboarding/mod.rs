//! Identity onboarding: MRZ intake, vetting, consent capture and identity
//! credential minting.
//!
//! An [`IdentitySession`] accumulates the volatile inputs of one onboarding
//! run. [`IdentitySession::finish`] consumes it, so document images, MRZ text
//! and claim plaintexts are dropped (and wiped) as soon as the credential is
//! minted. Only the SHA-256 of the canonical credential reaches the ledger.

pub mod mrz;
pub mod vetting;

use ed25519_dalek::SigningKey;
use serde::{Deserialize, Serialize};
use zeroize::Zeroizing;

use crate::authn::{AuthRejection, ClientContext, RelyingParty, SignedEnvelope};
use crate::canonical;
use crate::did::Did;
use crate::ledger::{AppendReceipt, Ledger, LedgerError};
use crate::vc::{issue_credential, ClaimSet, CredentialError, CredentialType, HeldCredential};

pub use mrz::{parse_mrz, MrzError, MrzField, MrzRecord, Td3Document};
pub use vetting::{
    vet_identity, AuthorityStatus, DigestFaceMatcher, FaceMatcher, IssuingAuthority, MockAuthority, VettingDecision,
    VettingReason, VettingResult, DEFAULT_FACE_THRESHOLD,
};

pub const CONSENT_OPERATION: &str = "consent";
pub const IDENTITY_VETTING_SCOPE: &str = "identity-vetting";
pub const DEFAULT_IDENTITY_TTL: i64 = 365 * 24 * 3600;

#[derive(Debug, thiserror::Error)]
pub enum OnboardingError {
    #[error(transparent)]
    Mrz(#[from] MrzError),
    #[error("face-match oracle unavailable: {0}")]
    OracleUnavailable(String),
    #[error("vetting has not produced a Verified decision")]
    VettingIncomplete,
    #[error("consent attestation missing")]
    ConsentMissing,
    #[error("consent attestation invalid: {0}")]
    ConsentInvalid(String),
    #[error("onboarding step out of order: {0}")]
    MissingInput(&'static str),
    #[error(transparent)]
    Credential(#[from] CredentialError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl OnboardingError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, OnboardingError::OracleUnavailable(_))
    }
}

/// What the holder agrees to; signed as the payload of a consent envelope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentStatement {
    pub subject: Did,
    pub scope: String,
}

impl ConsentStatement {
    pub fn to_payload(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentAttestation {
    pub subject: Did,
    pub scope: String,
    pub context: ClientContext,
    pub envelope: SignedEnvelope,
}

/// Checks a consent envelope with the relying party (consuming its
/// challenge) and that it names `expected_subject` and `scope`.
pub fn verify_consent(
    rp: &RelyingParty,
    envelope: &SignedEnvelope,
    expected_subject: &Did,
    scope: &str,
    now: i64,
) -> Result<ConsentAttestation, OnboardingError> {
    let accepted = rp
        .finish_auth(envelope, now)
        .map_err(|e: AuthRejection| OnboardingError::ConsentInvalid(e.to_string()))?;
    if accepted.operation != CONSENT_OPERATION {
        return Err(OnboardingError::ConsentInvalid("envelope is not for the consent operation".into()));
    }
    if accepted.user_id != expected_subject.to_string() {
        return Err(OnboardingError::ConsentInvalid("authenticator belongs to another user".into()));
    }
    let statement: ConsentStatement = serde_json::from_slice(&accepted.payload)
        .map_err(|e| OnboardingError::ConsentInvalid(format!("payload: {e}")))?;
    if &statement.subject != expected_subject || statement.scope != scope {
        return Err(OnboardingError::ConsentInvalid("statement does not match this session".into()));
    }
    Ok(ConsentAttestation { subject: statement.subject, scope: statement.scope, context: accepted.context, envelope: envelope.clone() })
}

/// Claims of the identity credential: name, birth date, document number,
/// nationality, document expiry and the derived age.
pub fn identity_claims(mrz: &MrzRecord, now: i64) -> Result<ClaimSet, OnboardingError> {
    let today = time::OffsetDateTime::from_unix_timestamp(now)
        .map_err(|_| OnboardingError::MissingInput("valid clock"))?
        .date();
    let birth = mrz
        .birth_date
        .as_birth_date(today.year())
        .ok_or(MrzError::MrzDate(MrzField::BirthDate))?;
    let expiry = mrz.expiry_date.as_expiry_date().ok_or(MrzError::MrzDate(MrzField::ExpiryDate))?;
    let mut age = today.year() - birth.year();
    if (today.month() as u8, today.day()) < (birth.month() as u8, birth.day()) {
        age -= 1;
    }
    Ok(ClaimSet::from_pairs([
        ("full_name", mrz.full_name()),
        ("date_of_birth", iso_date(birth)),
        ("document_number", mrz.document_number.clone()),
        ("nationality", mrz.nationality.clone()),
        ("document_expiry", iso_date(expiry)),
        ("age", age.to_string()),
    ])?)
}

fn iso_date(d: time::Date) -> String {
    format!("{:04}-{:02}-{:02}", d.year(), d.month() as u8, d.day())
}

#[derive(Debug, Clone)]
pub struct MintedIdentity {
    pub credential: HeldCredential,
    pub digest: [u8; 32],
    pub receipt: AppendReceipt,
}

/// Issues the identity credential and anchors its digest.
#[allow(clippy::too_many_arguments)]
pub fn mint_identity_credential(
    vetting: &VettingResult,
    mrz: &MrzRecord,
    subject: &Did,
    consent: Option<&ConsentAttestation>,
    issuer_key: &SigningKey,
    ledger: &Ledger,
    ttl_seconds: i64,
    now: i64,
) -> Result<MintedIdentity, OnboardingError> {
    if !vetting.is_verified() {
        return Err(OnboardingError::VettingIncomplete);
    }
    let consent = consent.ok_or(OnboardingError::ConsentMissing)?;
    if &consent.subject != subject {
        return Err(OnboardingError::ConsentMissing);
    }
    let claims = identity_claims(mrz, now)?;
    let credential = issue_credential(&claims, CredentialType::Identity, issuer_key, subject, ttl_seconds, now)?;
    let digest = credential.credential.digest();
    let receipt = ledger.append(&digest)?;
    Ok(MintedIdentity { credential, digest, receipt })
}

/// Volatile per-session onboarding inputs.
pub struct IdentitySession {
    pub subject: Did,
    mrz: Option<MrzRecord>,
    document_photo: Option<Zeroizing<Vec<u8>>>,
    selfie: Option<Zeroizing<Vec<u8>>>,
    consent: Option<ConsentAttestation>,
    vetting: Option<VettingResult>,
}

impl std::fmt::Debug for IdentitySession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IdentitySession")
            .field("subject", &self.subject)
            .field("has_mrz", &self.mrz.is_some())
            .field("has_photos", &self.document_photo.is_some())
            .field("has_consent", &self.consent.is_some())
            .field("vetting", &self.vetting.as_ref().map(|v| v.decision))
            .finish()
    }
}

impl IdentitySession {
    pub fn new(subject: Did) -> Self {
        Self { subject, mrz: None, document_photo: None, selfie: None, consent: None, vetting: None }
    }

    pub fn submit_mrz(&mut self, line1: &str, line2: &str) -> Result<(), OnboardingError> {
        self.mrz = Some(parse_mrz(line1, line2)?);
        self.vetting = None;
        Ok(())
    }

    pub fn submit_photos(&mut self, document_photo: Vec<u8>, selfie: Vec<u8>) {
        self.document_photo = Some(Zeroizing::new(document_photo));
        self.selfie = Some(Zeroizing::new(selfie));
        self.vetting = None;
    }

    pub fn submit_consent(&mut self, consent: ConsentAttestation) {
        self.consent = Some(consent);
    }

    pub fn consent(&self) -> Option<&ConsentAttestation> {
        self.consent.as_ref()
    }

    pub fn vetting(&self) -> Option<&VettingResult> {
        self.vetting.as_ref()
    }

    pub fn vet(
        &mut self,
        oracle: &dyn FaceMatcher,
        authority: &dyn IssuingAuthority,
        face_threshold: f64,
    ) -> Result<&VettingResult, OnboardingError> {
        let mrz = self.mrz.as_ref().ok_or(OnboardingError::MissingInput("mrz"))?;
        let (Some(doc), Some(selfie)) = (&self.document_photo, &self.selfie) else {
            return Err(OnboardingError::MissingInput("photos"));
        };
        let result = vet_identity(mrz, doc, selfie, oracle, authority, face_threshold)?;
        Ok(self.vetting.insert(result))
    }

    /// Mints the identity credential, consuming (and erasing) the session.
    pub fn finish(self, issuer_key: &SigningKey, ledger: &Ledger, ttl_seconds: i64, now: i64) -> Result<MintedIdentity, OnboardingError> {
        let vetting = self.vetting.as_ref().ok_or(OnboardingError::VettingIncomplete)?;
        let mrz = self.mrz.as_ref().ok_or(OnboardingError::MissingInput("mrz"))?;
        mint_identity_credential(vetting, mrz, &self.subject, self.consent.as_ref(), issuer_key, ledger, ttl_seconds, now)
    }
}

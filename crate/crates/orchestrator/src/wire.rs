//! JSON bodies of the HTTP API, shared with clients.

use dipa_core::authn::session::{SealedMessage, ServerHello};
use dipa_core::authn::{Attestation, SignedEnvelope};
use dipa_core::encoding::b64;
use dipa_core::fhir::{AccessToken, CanonicalObservation};
use dipa_core::ledger::{AppendReceipt, CalendarHead};
use dipa_core::onboarding::VettingResult;
use dipa_core::presentation::{QrMode, VerifiedStatus};
use dipa_core::vc::{HeldCredential, Presentation};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::policy::Decision;

pub const SESSION_OPERATION: &str = dipa_core::authn::session::SESSION_OPERATION;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterBegin {
    pub user_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChallengeIssued {
    #[serde(with = "b64")]
    pub challenge: [u8; 32],
    pub expires_at: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterFinish {
    pub user_id: String,
    pub attestation: Attestation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Registered {
    #[serde(with = "b64")]
    pub credential_id: [u8; 16],
    pub registered_at: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssertBegin {
    pub user_id: String,
    pub operation: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssertFinish {
    pub envelope: SignedEnvelope,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Asserted {
    pub user_id: String,
    pub operation: String,
    /// Present for `session` assertions.
    #[serde(default)]
    pub hello: Option<ServerHello>,
    #[serde(default)]
    pub session_expires_at: Option<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sealed {
    pub sealed: SealedMessage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnboardingStarted {
    pub onboarding_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnboardingRef {
    pub onboarding_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MrzSubmit {
    pub onboarding_id: String,
    pub line1: String,
    pub line2: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhotosSubmit {
    pub onboarding_id: String,
    #[serde(with = "b64")]
    pub document_photo: Vec<u8>,
    #[serde(with = "b64")]
    pub selfie: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsentSubmit {
    pub onboarding_id: String,
    pub envelope: SignedEnvelope,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Accepted {
    pub ok: bool,
}

/// Sealed body of a successful `/onboarding/finish`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityIssued {
    pub credential: HeldCredential,
    pub receipt: AppendReceipt,
    pub vetting: VettingResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenRequest {
    pub grant_type: String,
    pub client_id: String,
    #[serde(default)]
    pub code: Option<String>,
    #[serde(default)]
    pub refresh_token: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkRequest {
    pub code: String,
    pub client_id: String,
}

/// Sealed body of `/fhir/link`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linked {
    pub token: AccessToken,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationBundle {
    pub entries: Vec<Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsFetch {
    pub access_token: String,
    #[serde(default)]
    pub since: Option<i64>,
}

/// Sealed body of `/results/fetch`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsFetched {
    pub observations: Vec<CanonicalObservation>,
    pub rejected: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IssueRequest {
    pub access_token: String,
    pub observation_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IssuedCredential {
    pub observation_id: String,
    pub credential: HeldCredential,
    pub receipt: AppendReceipt,
}

/// Sealed body of `/credentials/issue`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CredentialsIssued {
    pub credentials: Vec<IssuedCredential>,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MintRequest {
    pub presentation: Presentation,
    pub mode: QrMode,
    #[serde(default)]
    pub ledger_seq: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Minted {
    pub payload: String,
    pub kid: String,
    pub exp: i64,
    pub size: usize,
    pub anchored: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub payload: String,
    /// Verifier-held heads; the server's own heads are used when absent.
    #[serde(default)]
    pub heads: Option<Vec<CalendarHead>>,
    /// Skip the ledger check entirely.
    #[serde(default)]
    pub offline: bool,
    /// Verification time override; defaults to the server clock.
    #[serde(default)]
    pub at: Option<i64>,
    /// Verifier type for policy evaluation.
    #[serde(default)]
    pub verifier: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verified {
    pub status: VerifiedStatus,
    #[serde(default)]
    pub policy: Option<Decision>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushRegister {
    pub token: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Heads {
    pub heads: Vec<CalendarHead>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IssuerInfo {
    pub did: String,
    pub origin: String,
    pub qr_ttl: i64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AuditReportQuery {
    #[serde(default)]
    pub from: Option<i64>,
    #[serde(default)]
    pub to: Option<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditSearchQuery {
    #[serde(default)]
    pub q: Option<String>,
    #[serde(default)]
    pub from: Option<i64>,
    #[serde(default)]
    pub to: Option<i64>,
    #[serde(default)]
    pub limit: Option<usize>,
}

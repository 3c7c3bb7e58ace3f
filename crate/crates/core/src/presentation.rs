//! Token server and QR payload layer.
//!
//! A QR payload is `b64url(canonical body) "." b64url(HMAC-SHA-256(body))`,
//! keyed by a rotating symmetric key held in the [`KeyRegistry`]. The body
//! embeds a holder-signed [`Presentation`] and, once the credential's ledger
//! batch is sealed, a compact [`LedgerRef`] so verifiers holding calendar
//! heads can check anchoring without contacting the ledger.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::RwLock;

use hmac::{Hmac, Mac};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use zeroize::Zeroizing;

use crate::canonical;
use crate::did::Did;
use crate::encoding::{b64, b64_decode, b64_encode};
use crate::ledger::{fold_path, verify_inclusion, CalendarHead, InclusionProof, PathStep};
use crate::vc::{
    verify_presentation, CredentialRejection, CredentialType, Disclosure, DisclosureMode, DisclosurePolicy,
    Presentation, PresentationRejection,
};
use crate::WIRE_VERSION;

/// Byte-mode capacity of a version-40 QR code at error-correction level L.
pub const MAX_PAYLOAD_BYTES: usize = 2953;
pub const DEFAULT_DYNAMIC_TTL: i64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PresentationError {
    #[error("no active QR key")]
    NoActiveKey,
    #[error("payload is {size} bytes, limit {limit}")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error("no push token registered")]
    NoPushToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QrMode {
    Dynamic,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OfflinePolicy {
    /// Accept with `ledger_check: skipped`.
    AcceptFlagged,
    Reject,
}

#[derive(Debug, Clone, Copy)]
pub struct PresentationConfig {
    pub dynamic_ttl: i64,
    /// How long a rotated key keeps verifying.
    pub grace: i64,
    pub offline: OfflinePolicy,
}

impl Default for PresentationConfig {
    fn default() -> Self {
        Self { dynamic_ttl: DEFAULT_DYNAMIC_TTL, grace: 2 * DEFAULT_DYNAMIC_TTL, offline: OfflinePolicy::AcceptFlagged }
    }
}

/// Points at the credential digest's leaf: the verifier recomputes the leaf
/// from the embedded credential and folds `path` up to the batch root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerRef {
    pub seq: u64,
    pub batch: u64,
    pub path: Vec<PathStep>,
}

impl LedgerRef {
    pub fn from_proof(seq: u64, proof: &InclusionProof) -> Self {
        Self { seq, batch: proof.batch, path: proof.path.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QrPayload {
    pub v: u8,
    pub kid: String,
    pub iat: i64,
    pub exp: i64,
    #[serde(with = "b64")]
    pub nonce: [u8; 16],
    pub mode: DisclosureMode,
    pub pres: Presentation,
    pub proof_ref: Option<LedgerRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerCheck {
    Passed,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum RejectReason {
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("MAC invalid")]
    MacInvalid,
    #[error("payload expired")]
    Expired,
    #[error("presentation invalid: {0}")]
    PresentationInvalid(PresentationRejection),
    #[error("ledger anchoring does not match the supplied heads")]
    LedgerMismatch,
    #[error("offline verification disabled by policy")]
    OfflineNotAllowed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedStatus {
    pub outcome: Outcome,
    pub reason: Option<RejectReason>,
    pub credential_type: Option<CredentialType>,
    pub disclosure: Option<Disclosure>,
    pub checked_at: i64,
    /// `None` when verification stopped before the ledger step.
    pub ledger_check: Option<LedgerCheck>,
}

impl VerifiedStatus {
    fn reject(reason: RejectReason, now: i64) -> Self {
        Self { outcome: Outcome::Reject, reason: Some(reason), credential_type: None, disclosure: None, checked_at: now, ledger_check: None }
    }

    pub fn is_accept(&self) -> bool {
        self.outcome == Outcome::Accept
    }

    pub fn claims(&self) -> BTreeMap<String, String> {
        self.disclosure.as_ref().map(|d| d.claims.clone()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub event: String,
    pub at: i64,
}

struct QrKey {
    key: Zeroizing<[u8; 32]>,
    created_at: i64,
    retired_at: Option<i64>,
}

#[derive(Default)]
struct RegistryState {
    qr_keys: BTreeMap<String, QrKey>,
    active: Option<String>,
    next_kid: u64,
    holder_keys: HashMap<Did, [u8; 32]>,
    trusted_issuers: BTreeSet<Did>,
    push_tokens: HashMap<String, String>,
    queues: HashMap<String, Vec<Notification>>,
}

/// Symmetric QR keys, trusted issuers, holder keys and push tokens.
pub struct KeyRegistry {
    config: PresentationConfig,
    policy: DisclosurePolicy,
    state: RwLock<RegistryState>,
}

impl std::fmt::Debug for KeyRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let state = self.state.read().unwrap();
        f.debug_struct("KeyRegistry")
            .field("config", &self.config)
            .field("kids", &state.qr_keys.keys().collect::<Vec<_>>())
            .field("active", &state.active)
            .finish_non_exhaustive()
    }
}

impl KeyRegistry {
    /// Creates the registry with one active key.
    pub fn new(config: PresentationConfig, policy: DisclosurePolicy, now: i64) -> Self {
        let registry = Self { config, policy, state: RwLock::new(RegistryState::default()) };
        registry.rotate_qr_key(now);
        registry
    }

    pub fn config(&self) -> PresentationConfig {
        self.config
    }

    pub fn policy(&self) -> &DisclosurePolicy {
        &self.policy
    }

    pub fn trust_issuer(&self, issuer: Did) {
        self.state.write().unwrap().trusted_issuers.insert(issuer);
    }

    pub fn is_trusted(&self, issuer: &Did) -> bool {
        self.state.read().unwrap().trusted_issuers.contains(issuer)
    }

    pub fn register_holder(&self, holder: &Did) {
        self.state.write().unwrap().holder_keys.insert(holder.clone(), *holder.public_key_bytes());
    }

    pub fn holder_key(&self, holder: &Did) -> Option<[u8; 32]> {
        self.state.read().unwrap().holder_keys.get(holder).copied()
    }

    /// Known key ids (active and in grace), oldest first.
    pub fn kids(&self) -> Vec<String> {
        self.state.read().unwrap().qr_keys.keys().cloned().collect()
    }

    pub fn active_kid(&self) -> Option<String> {
        self.state.read().unwrap().active.clone()
    }

    /// Installs a fresh active key; the previous one verifies for `grace`
    /// more seconds. Keys past their grace are purged.
    pub fn rotate_qr_key(&self, now: i64) -> String {
        let mut state = self.state.write().unwrap();
        let grace = self.config.grace;
        state.qr_keys.retain(|_, k| k.retired_at.is_none_or(|r| now < r + grace));
        if let Some(old) = state.active.take() {
            if let Some(k) = state.qr_keys.get_mut(&old) {
                k.retired_at = Some(now);
            }
        }
        state.next_kid += 1;
        let kid = format!("k{:06}", state.next_kid);
        let mut key = Zeroizing::new([0u8; 32]);
        OsRng.fill_bytes(&mut key[..]);
        state.qr_keys.insert(kid.clone(), QrKey { key, created_at: now, retired_at: None });
        state.active = Some(kid.clone());
        kid
    }

    fn sign(&self, kid: &str, body: &[u8]) -> Option<[u8; 32]> {
        let state = self.state.read().unwrap();
        let k = state.qr_keys.get(kid).filter(|k| k.retired_at.is_none())?;
        let mut m = hmac_for(&k.key);
        m.update(body);
        Some(m.finalize().into_bytes().into())
    }

    /// Constant-time check; keys past their grace period count as unknown.
    fn check_mac(&self, kid: &str, body: &[u8], tag: &[u8; 32], now: i64) -> bool {
        let state = self.state.read().unwrap();
        let Some(k) = state.qr_keys.get(kid) else {
            return false;
        };
        if k.retired_at.is_some_and(|r| now >= r + self.config.grace) || now < k.created_at - self.config.dynamic_ttl {
            return false;
        }
        let mut m = hmac_for(&k.key);
        m.update(body);
        m.verify_slice(tag).is_ok()
    }

    pub fn register_push(&self, user: &str, token: &str) {
        let mut state = self.state.write().unwrap();
        state.push_tokens.insert(user.to_string(), token.to_string());
        state.queues.entry(token.to_string()).or_default();
    }

    /// Delivers `event` to the user's current push token; returns the new
    /// queue length.
    pub fn notify(&self, user: &str, event: &str, now: i64) -> Result<usize, PresentationError> {
        let mut state = self.state.write().unwrap();
        let token = state.push_tokens.get(user).cloned().ok_or(PresentationError::NoPushToken)?;
        let queue = state.queues.entry(token).or_default();
        queue.push(Notification { event: event.to_string(), at: now });
        Ok(queue.len())
    }

    pub fn queue(&self, token: &str) -> Vec<Notification> {
        self.state.read().unwrap().queues.get(token).cloned().unwrap_or_default()
    }
}

fn hmac_for(key: &[u8; 32]) -> Hmac<Sha256> {
    <Hmac<Sha256> as Mac>::new_from_slice(key).expect("hmac takes any key length")
}

/// Seals `presentation` under the active key and returns the wire string.
pub fn mint_qr(
    presentation: &Presentation,
    mode: QrMode,
    proof_ref: Option<LedgerRef>,
    registry: &KeyRegistry,
    now: i64,
) -> Result<String, PresentationError> {
    let kid = registry.active_kid().ok_or(PresentationError::NoActiveKey)?;
    let exp = match mode {
        QrMode::Dynamic => (now + registry.config.dynamic_ttl).min(presentation.credential.expires_at),
        QrMode::Static => presentation.credential.expires_at,
    };
    let payload = QrPayload {
        v: WIRE_VERSION,
        kid: kid.clone(),
        iat: now,
        exp,
        nonce: presentation.nonce,
        mode: presentation.mode,
        pres: presentation.clone(),
        proof_ref,
    };
    let body = canonical::to_vec(&payload);
    let tag = registry.sign(&kid, &body).ok_or(PresentationError::NoActiveKey)?;
    let wire = format!("{}.{}", b64_encode(&body), b64_encode(tag));
    if wire.len() > MAX_PAYLOAD_BYTES {
        return Err(PresentationError::PayloadTooLarge { size: wire.len(), limit: MAX_PAYLOAD_BYTES });
    }
    Ok(wire)
}

/// Decodes without checking the MAC.
pub fn decode_qr(wire: &str) -> Result<(QrPayload, Vec<u8>, [u8; 32]), RejectReason> {
    let malformed = |m: &str| RejectReason::Malformed(m.to_string());
    if wire.len() > MAX_PAYLOAD_BYTES {
        return Err(malformed("oversized"));
    }
    let (body_b64, tag_b64) = wire.trim().split_once('.').ok_or_else(|| malformed("missing separator"))?;
    let body = b64_decode(body_b64).map_err(|_| malformed("body encoding"))?;
    let tag: [u8; 32] = b64_decode(tag_b64)
        .ok()
        .and_then(|t| t.try_into().ok())
        .ok_or_else(|| malformed("mac encoding"))?;
    let payload: QrPayload = canonical::from_slice(&body).map_err(|e| RejectReason::Malformed(e.to_string()))?;
    if payload.v != WIRE_VERSION {
        return Err(malformed("version"));
    }
    Ok((payload, body, tag))
}

/// Decode, MAC, expiry, presentation, ledger; the first failure wins.
/// `heads: None` is offline mode.
pub fn verify_qr(wire: &str, registry: &KeyRegistry, heads: Option<&[CalendarHead]>, now: i64) -> VerifiedStatus {
    let (payload, body, tag) = match decode_qr(wire) {
        Ok(d) => d,
        Err(reason) => return VerifiedStatus::reject(reason, now),
    };
    if !registry.check_mac(&payload.kid, &body, &tag, now) {
        return VerifiedStatus::reject(RejectReason::MacInvalid, now);
    }
    if now >= payload.exp || now < payload.iat - registry.config.dynamic_ttl {
        return VerifiedStatus::reject(RejectReason::Expired, now);
    }
    if payload.nonce != payload.pres.nonce || payload.mode != payload.pres.mode {
        return VerifiedStatus::reject(RejectReason::Malformed("envelope disagrees with presentation".into()), now);
    }

    let vc = &payload.pres.credential;
    if !registry.is_trusted(&vc.issuer) {
        return VerifiedStatus::reject(
            RejectReason::PresentationInvalid(PresentationRejection::CredentialInvalid(CredentialRejection::IssuerMismatch)),
            now,
        );
    }
    let disclosure =
        match verify_presentation(&payload.pres, vc.issuer.public_key_bytes(), &payload.nonce, now, &registry.policy) {
            Ok(d) => d,
            Err(e) => return VerifiedStatus::reject(RejectReason::PresentationInvalid(e), now),
        };

    let (ledger_check, reason) = match heads {
        None => match registry.config.offline {
            OfflinePolicy::AcceptFlagged => (LedgerCheck::Skipped, None),
            OfflinePolicy::Reject => (LedgerCheck::Skipped, Some(RejectReason::OfflineNotAllowed)),
        },
        Some(heads) => match &payload.proof_ref {
            Some(r) if ledger_ref_verifies(r, &vc.digest(), heads) => (LedgerCheck::Passed, None),
            _ => (LedgerCheck::Failed, Some(RejectReason::LedgerMismatch)),
        },
    };
    VerifiedStatus {
        outcome: if reason.is_none() { Outcome::Accept } else { Outcome::Reject },
        reason,
        credential_type: Some(disclosure.credential_type),
        disclosure: Some(disclosure),
        checked_at: now,
        ledger_check: Some(ledger_check),
    }
}

fn ledger_ref_verifies(r: &LedgerRef, digest: &[u8; 32], heads: &[CalendarHead]) -> bool {
    let Some(head) = heads.iter().find(|h| h.batch_id == r.batch) else {
        return false;
    };
    let proof = InclusionProof {
        v: WIRE_VERSION,
        leaf: *digest,
        path: r.path.clone(),
        root: fold_path(digest, &r.path),
        batch: r.batch,
        head: head.head,
    };
    verify_inclusion(&proof, heads).is_ok()
}

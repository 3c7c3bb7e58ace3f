//! FIDO2-style relying party with signed extension envelopes.
//!
//! Registration binds a self-attested Ed25519 key to a user id. Afterwards
//! every application payload the client sends travels inside a
//! [`SignedEnvelope`]: the authenticator signs
//! `SHA-256(challenge || canonical(client_context) || payload || counter_be64)`,
//! so each data transfer carries the same consent gesture as a login.

pub mod session;

use std::collections::HashMap;
use std::sync::{Mutex, RwLock};

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::encoding::b64;
use crate::{sha256, WIRE_VERSION};

pub const DEFAULT_CHALLENGE_TTL: i64 = 120;
pub const REGISTRATION_OPERATION: &str = "register";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthnError {
    #[error("unknown user")]
    UnknownUser,
    #[error("challenge missing, expired or already used")]
    ChallengeInvalid,
    #[error("attestation signature invalid")]
    AttestationInvalid,
    #[error("authenticator state could not be decoded: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum AuthRejection {
    #[error("challenge missing, expired or already used")]
    ChallengeInvalid,
    #[error("envelope signature invalid")]
    SignatureInvalid,
    #[error("sign counter did not increase")]
    CounterRegression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthenticatorRecord {
    pub user_id: String,
    #[serde(with = "b64")]
    pub credential_id: [u8; 16],
    #[serde(with = "b64")]
    pub public_key: [u8; 32],
    pub sign_counter: u64,
    pub registered_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    #[serde(with = "b64")]
    pub value: [u8; 32],
    pub user_id: String,
    pub operation: String,
    pub issued_at: i64,
    pub ttl_seconds: i64,
    pub used: bool,
}

impl Challenge {
    pub fn is_live(&self, now: i64) -> bool {
        !self.used && now >= self.issued_at && now < self.issued_at + self.ttl_seconds
    }
}

/// Self-attestation: the new public key signs the registration challenge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attestation {
    #[serde(with = "b64")]
    pub public_key: [u8; 32],
    #[serde(with = "b64")]
    pub challenge: [u8; 32],
    #[serde(with = "b64")]
    pub signature: [u8; 64],
}

fn attestation_message(challenge: &[u8; 32], user_id: &str) -> [u8; 32] {
    sha256(&[b"dipa-attest-v1", challenge, user_id.as_bytes()])
}

impl Attestation {
    pub fn create(key: &SigningKey, challenge: &[u8; 32], user_id: &str) -> Self {
        Self {
            public_key: key.verifying_key().to_bytes(),
            challenge: *challenge,
            signature: key.sign(&attestation_message(challenge, user_id)).to_bytes(),
        }
    }
}

/// Context the client reports alongside each signed payload. Values the
/// client did not supply stay `None` and serialize as `null`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientContext {
    pub origin: String,
    pub operation: String,
    pub timestamp: i64,
    pub geolocation: Option<String>,
    pub device: Option<String>,
    pub liveness: Option<bool>,
}

impl ClientContext {
    pub fn new(origin: impl Into<String>, operation: impl Into<String>, timestamp: i64) -> Self {
        Self {
            origin: origin.into(),
            operation: operation.into(),
            timestamp,
            geolocation: None,
            device: None,
            liveness: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedEnvelope {
    pub v: u8,
    #[serde(with = "b64")]
    pub credential_id: [u8; 16],
    #[serde(with = "b64")]
    pub challenge: [u8; 32],
    pub client_context: ClientContext,
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
    pub counter: u64,
    #[serde(with = "b64")]
    pub signature: [u8; 64],
}

pub fn envelope_digest(challenge: &[u8; 32], context: &ClientContext, payload: &[u8], counter: u64) -> [u8; 32] {
    sha256(&[challenge, &canonical::to_vec(context), payload, &counter.to_be_bytes()])
}

impl SignedEnvelope {
    /// Client side: sign `payload` against a live challenge.
    pub fn sign(
        key: &SigningKey,
        credential_id: [u8; 16],
        challenge: [u8; 32],
        client_context: ClientContext,
        payload: Vec<u8>,
        counter: u64,
    ) -> Self {
        let digest = envelope_digest(&challenge, &client_context, &payload, counter);
        Self {
            v: WIRE_VERSION,
            credential_id,
            challenge,
            client_context,
            payload,
            counter,
            signature: key.sign(&digest).to_bytes(),
        }
    }

    pub fn digest(&self) -> [u8; 32] {
        envelope_digest(&self.challenge, &self.client_context, &self.payload, self.counter)
    }
}

/// Result of an accepted [`RelyingParty::finish_auth`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcceptedAssertion {
    pub user_id: String,
    pub credential_id: [u8; 16],
    pub operation: String,
    pub context: ClientContext,
    pub payload: Vec<u8>,
    pub counter: u64,
}

#[derive(Debug, Clone)]
pub struct AuthnConfig {
    pub challenge_ttl: i64,
}

impl Default for AuthnConfig {
    fn default() -> Self {
        Self { challenge_ttl: DEFAULT_CHALLENGE_TTL }
    }
}

#[derive(Debug, Default)]
struct Records {
    by_credential: HashMap<[u8; 16], AuthenticatorRecord>,
    by_user: HashMap<String, [u8; 16]>,
}

#[derive(Debug, Default)]
pub struct RelyingParty {
    config: AuthnConfig,
    records: RwLock<Records>,
    challenges: Mutex<HashMap<[u8; 32], Challenge>>,
}

impl RelyingParty {
    pub fn new(config: AuthnConfig) -> Self {
        Self { config, ..Default::default() }
    }

    fn issue_challenge(&self, user_id: &str, operation: &str, now: i64) -> Challenge {
        let mut value = [0u8; 32];
        OsRng.fill_bytes(&mut value);
        let challenge = Challenge {
            value,
            user_id: user_id.to_string(),
            operation: operation.to_string(),
            issued_at: now,
            ttl_seconds: self.config.challenge_ttl,
            used: false,
        };
        let mut store = self.challenges.lock().expect("challenge lock poisoned");
        store.retain(|_, c| c.is_live(now));
        store.insert(value, challenge.clone());
        challenge
    }

    /// Atomically removes the challenge; it is consumed whatever happens next.
    fn take_challenge(&self, value: &[u8; 32], now: i64) -> Option<Challenge> {
        let challenge = self.challenges.lock().expect("challenge lock poisoned").remove(value)?;
        challenge.is_live(now).then_some(challenge)
    }

    pub fn begin_registration(&self, user_id: &str, now: i64) -> Challenge {
        self.issue_challenge(user_id, REGISTRATION_OPERATION, now)
    }

    /// Stores a new authenticator with `sign_counter = 0`, replacing any
    /// previous authenticator of the user.
    pub fn register(&self, user_id: &str, attestation: &Attestation, now: i64) -> Result<AuthenticatorRecord, AuthnError> {
        let challenge = self.take_challenge(&attestation.challenge, now).ok_or(AuthnError::ChallengeInvalid)?;
        if challenge.user_id != user_id || challenge.operation != REGISTRATION_OPERATION {
            return Err(AuthnError::ChallengeInvalid);
        }
        let key = VerifyingKey::from_bytes(&attestation.public_key).map_err(|_| AuthnError::AttestationInvalid)?;
        key.verify_strict(&attestation_message(&attestation.challenge, user_id), &Signature::from_bytes(&attestation.signature))
            .map_err(|_| AuthnError::AttestationInvalid)?;

        let mut records = self.records.write().expect("records lock poisoned");
        let credential_id = loop {
            let mut id = [0u8; 16];
            OsRng.fill_bytes(&mut id);
            if !records.by_credential.contains_key(&id) {
                break id;
            }
        };
        let record = AuthenticatorRecord {
            user_id: user_id.to_string(),
            credential_id,
            public_key: attestation.public_key,
            sign_counter: 0,
            registered_at: now,
        };
        if let Some(old) = records.by_user.insert(user_id.to_string(), credential_id) {
            records.by_credential.remove(&old);
        }
        records.by_credential.insert(credential_id, record.clone());
        Ok(record)
    }

    pub fn begin_auth(&self, user_id: &str, operation: &str, now: i64) -> Result<Challenge, AuthnError> {
        if !self.records.read().expect("records lock poisoned").by_user.contains_key(user_id) {
            return Err(AuthnError::UnknownUser);
        }
        Ok(self.issue_challenge(user_id, operation, now))
    }

    pub fn finish_auth(&self, envelope: &SignedEnvelope, now: i64) -> Result<AcceptedAssertion, AuthRejection> {
        let challenge = self.take_challenge(&envelope.challenge, now).ok_or(AuthRejection::ChallengeInvalid)?;
        if challenge.operation != envelope.client_context.operation {
            return Err(AuthRejection::ChallengeInvalid);
        }
        let mut records = self.records.write().expect("records lock poisoned");
        let record = records
            .by_credential
            .get_mut(&envelope.credential_id)
            .filter(|r| r.user_id == challenge.user_id)
            .ok_or(AuthRejection::ChallengeInvalid)?;
        let key = VerifyingKey::from_bytes(&record.public_key).map_err(|_| AuthRejection::SignatureInvalid)?;
        key.verify_strict(&envelope.digest(), &Signature::from_bytes(&envelope.signature))
            .map_err(|_| AuthRejection::SignatureInvalid)?;
        if envelope.counter <= record.sign_counter {
            return Err(AuthRejection::CounterRegression);
        }
        record.sign_counter = envelope.counter;
        Ok(AcceptedAssertion {
            user_id: record.user_id.clone(),
            credential_id: record.credential_id,
            operation: challenge.operation,
            context: envelope.client_context.clone(),
            payload: envelope.payload.clone(),
            counter: envelope.counter,
        })
    }

    pub fn record_for_user(&self, user_id: &str) -> Option<AuthenticatorRecord> {
        let records = self.records.read().expect("records lock poisoned");
        records.by_user.get(user_id).and_then(|id| records.by_credential.get(id)).cloned()
    }

    /// Persistable authenticator state (records only; challenges are volatile).
    pub fn snapshot(&self) -> Vec<u8> {
        let records = self.records.read().expect("records lock poisoned");
        let mut list: Vec<&AuthenticatorRecord> = records.by_credential.values().collect();
        list.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        serde_json::to_vec_pretty(&list).expect("records serialize")
    }

    pub fn restore(config: AuthnConfig, snapshot: &[u8]) -> Result<Self, AuthnError> {
        let list: Vec<AuthenticatorRecord> =
            serde_json::from_slice(snapshot).map_err(|e| AuthnError::Snapshot(e.to_string()))?;
        let rp = Self::new(config);
        {
            let mut records = rp.records.write().expect("records lock poisoned");
            for record in list {
                records.by_user.insert(record.user_id.clone(), record.credential_id);
                records.by_credential.insert(record.credential_id, record);
            }
        }
        Ok(rp)
    }
}

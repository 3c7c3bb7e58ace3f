//! Verifiable credentials with per-claim salted commitments.
//!
//! The issuer never signs claim values directly. Each claim is committed as
//! `SHA-256(salt || name || 0x1F || value)` and the signature covers the map of
//! commitments. The holder keeps values and salts ([`HeldCredential`]) and
//! reveals any subset in a [`Presentation`], which a verifier checks by
//! recomputing the commitments.

use std::collections::{BTreeMap, BTreeSet};

use ed25519_dalek::{Signature, Signer, SigningKey};
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::canonical;
use crate::did::{derive_did, Did};
use crate::encoding::b64;
use crate::WIRE_VERSION;

pub const PROOF_SUITE: &str = "Ed25519-2020-canonical-json";

/// Byte placed between claim name and value inside a commitment.
pub const CLAIM_SEPARATOR: u8 = 0x1f;

/// Claims that may only be revealed in [`DisclosureMode::Identified`].
pub const IDENTITY_CLAIMS: [&str; 4] = ["full_name", "date_of_birth", "document_number", "address"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CredentialError {
    #[error("ttl must be positive, got {0}")]
    InvalidTtl(i64),
    #[error("invalid claim name {0:?}")]
    InvalidClaimName(String),
    #[error("duplicate claim {0:?}")]
    DuplicateClaim(String),
    #[error("credential has no claim {0:?}")]
    UnknownClaim(String),
    #[error("claim {0:?} may not be revealed in de-identified mode")]
    DisclosurePolicyViolation(String),
    #[error("holder key does not control the credential subject")]
    HolderKeyMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum CredentialRejection {
    #[error("bad signature")]
    BadSignature,
    #[error("credential expired")]
    Expired,
    #[error("issuer does not match verification key")]
    IssuerMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum PresentationRejection {
    #[error("embedded credential invalid: {0}")]
    CredentialInvalid(CredentialRejection),
    #[error("revealed claim {0:?} does not match its commitment")]
    CommitmentMismatch(String),
    #[error("holder signature invalid")]
    HolderSignatureInvalid,
    #[error("nonce mismatch")]
    NonceMismatch,
    #[error("claim {0:?} revealed in de-identified mode")]
    DisclosurePolicyViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CredentialType {
    Identity,
    TestResult,
    Vaccination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DisclosureMode {
    Identified,
    DeIdentified,
}

/// Claim names and values before issuance. Names are unique and sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClaimSet(BTreeMap<String, String>);

impl ClaimSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: impl Into<String>) -> Result<(), CredentialError> {
        let name = name.into();
        if name.is_empty() || name.as_bytes().contains(&CLAIM_SEPARATOR) {
            return Err(CredentialError::InvalidClaimName(name));
        }
        if self.0.contains_key(&name) {
            return Err(CredentialError::DuplicateClaim(name));
        }
        self.0.insert(name, value.into());
        Ok(())
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self, CredentialError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut set = Self::new();
        for (k, v) in pairs {
            set.insert(k, v)?;
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Which claim names count as identifying.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisclosurePolicy {
    pub identity_claims: BTreeSet<String>,
}

impl Default for DisclosurePolicy {
    fn default() -> Self {
        Self { identity_claims: IDENTITY_CLAIMS.iter().map(|s| s.to_string()).collect() }
    }
}

impl DisclosurePolicy {
    pub fn is_identity_claim(&self, name: &str) -> bool {
        self.identity_claims.contains(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Commitment(#[serde(with = "b64")] pub [u8; 32]);

pub fn commitment(salt: &[u8; 16], name: &str, value: &str) -> Commitment {
    Commitment(crate::sha256(&[salt, name.as_bytes(), &[CLAIM_SEPARATOR], value.as_bytes()]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialProof {
    pub suite: String,
    pub verification_method: Did,
    #[serde(with = "b64")]
    pub signature: [u8; 64],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifiableCredential {
    pub v: u8,
    #[serde(with = "strict_uuid")]
    pub id: Uuid,
    #[serde(rename = "type")]
    pub credential_type: CredentialType,
    pub issuer: Did,
    pub subject: Did,
    pub issued_at: i64,
    pub expires_at: i64,
    pub commitments: BTreeMap<String, Commitment>,
    pub proof: CredentialProof,
}

impl VerifiableCredential {
    /// Canonical bytes covered by the issuer signature (everything but `proof`).
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut tree = serde_json::to_value(self).expect("credential serializes");
        tree.as_object_mut().expect("credential is an object").remove("proof");
        canonical::to_vec(&tree)
    }

    pub fn to_canonical(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }

    /// SHA-256 of the full canonical credential, as anchored on the ledger.
    pub fn digest(&self) -> [u8; 32] {
        crate::sha256(&[&self.to_canonical()])
    }

    pub fn is_expired(&self, now: i64) -> bool {
        now >= self.expires_at
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaltedClaim {
    pub value: String,
    #[serde(with = "b64")]
    pub salt: [u8; 16],
}

/// A credential together with the claim openings only its holder keeps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldCredential {
    pub credential: VerifiableCredential,
    pub claims: BTreeMap<String, SaltedClaim>,
}

impl HeldCredential {
    pub fn claim(&self, name: &str) -> Option<&str> {
        self.claims.get(name).map(|c| c.value.as_str())
    }
}

pub fn issue_credential(
    claims: &ClaimSet,
    credential_type: CredentialType,
    issuer_key: &SigningKey,
    subject: &Did,
    ttl_seconds: i64,
    now: i64,
) -> Result<HeldCredential, CredentialError> {
    issue_credential_with_rng(claims, credential_type, issuer_key, subject, ttl_seconds, now, &mut OsRng)
}

pub fn issue_credential_with_rng<R: RngCore + CryptoRng>(
    claims: &ClaimSet,
    credential_type: CredentialType,
    issuer_key: &SigningKey,
    subject: &Did,
    ttl_seconds: i64,
    now: i64,
    rng: &mut R,
) -> Result<HeldCredential, CredentialError> {
    if ttl_seconds <= 0 {
        return Err(CredentialError::InvalidTtl(ttl_seconds));
    }
    let issuer = Did::from_verifying_key(&issuer_key.verifying_key());
    let mut used_salts = BTreeSet::new();
    let mut openings = BTreeMap::new();
    let mut commitments = BTreeMap::new();
    for (name, value) in claims.iter() {
        let salt = loop {
            let mut salt = [0u8; 16];
            rng.fill_bytes(&mut salt);
            if used_salts.insert(salt) {
                break salt;
            }
        };
        commitments.insert(name.to_string(), commitment(&salt, name, value));
        openings.insert(name.to_string(), SaltedClaim { value: value.to_string(), salt });
    }
    let mut id = [0u8; 16];
    rng.fill_bytes(&mut id);
    let mut credential = VerifiableCredential {
        v: WIRE_VERSION,
        id: uuid::Builder::from_random_bytes(id).into_uuid(),
        credential_type,
        issuer: issuer.clone(),
        subject: subject.clone(),
        issued_at: now,
        expires_at: now.saturating_add(ttl_seconds),
        commitments,
        proof: CredentialProof {
            suite: PROOF_SUITE.to_string(),
            verification_method: issuer,
            signature: [0u8; 64],
        },
    };
    credential.proof.signature = issuer_key.sign(&credential.signing_bytes()).to_bytes();
    Ok(HeldCredential { credential, claims: openings })
}

/// Accepts iff the signature is valid over the canonical form, the issuer and
/// verification method both name `issuer_pubkey`, and `now < expires_at`.
pub fn verify_credential(
    vc: &VerifiableCredential,
    issuer_pubkey: &[u8],
    now: i64,
) -> Result<(), CredentialRejection> {
    let issuer = derive_did(issuer_pubkey).map_err(|_| CredentialRejection::IssuerMismatch)?;
    if vc.issuer != issuer || vc.proof.verification_method != issuer {
        return Err(CredentialRejection::IssuerMismatch);
    }
    if vc.proof.suite != PROOF_SUITE {
        return Err(CredentialRejection::BadSignature);
    }
    let signature = Signature::from_bytes(&vc.proof.signature);
    issuer
        .verifying_key()
        .verify_strict(&vc.signing_bytes(), &signature)
        .map_err(|_| CredentialRejection::BadSignature)?;
    if vc.is_expired(now) {
        return Err(CredentialRejection::Expired);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevealedClaim {
    pub name: String,
    pub value: String,
    #[serde(with = "b64")]
    pub salt: [u8; 16],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Presentation {
    pub v: u8,
    pub credential: VerifiableCredential,
    pub revealed: Vec<RevealedClaim>,
    pub mode: DisclosureMode,
    #[serde(with = "b64")]
    pub nonce: [u8; 16],
    pub created_at: i64,
    #[serde(with = "b64")]
    pub holder_signature: [u8; 64],
}

impl Presentation {
    /// Canonical body without the holder signature, followed by the nonce.
    pub fn holder_signing_bytes(&self) -> Vec<u8> {
        let mut tree = serde_json::to_value(self).expect("presentation serializes");
        tree.as_object_mut().expect("presentation is an object").remove("holder_signature");
        let mut bytes = canonical::to_vec(&tree);
        bytes.extend_from_slice(&self.nonce);
        bytes
    }
}

/// What a verifier learns from an accepted presentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disclosure {
    pub credential_id: Uuid,
    pub credential_type: CredentialType,
    pub issuer: Did,
    pub subject: Did,
    pub mode: DisclosureMode,
    pub expires_at: i64,
    pub claims: BTreeMap<String, String>,
}

pub fn derive_presentation(
    held: &HeldCredential,
    reveal: &BTreeSet<String>,
    mode: DisclosureMode,
    holder_key: &SigningKey,
    nonce: [u8; 16],
    now: i64,
    policy: &DisclosurePolicy,
) -> Result<Presentation, CredentialError> {
    if Did::from_verifying_key(&holder_key.verifying_key()) != held.credential.subject {
        return Err(CredentialError::HolderKeyMismatch);
    }
    let mut revealed = Vec::with_capacity(reveal.len());
    for name in reveal {
        let opening = held.claims.get(name).ok_or_else(|| CredentialError::UnknownClaim(name.clone()))?;
        if mode == DisclosureMode::DeIdentified && policy.is_identity_claim(name) {
            return Err(CredentialError::DisclosurePolicyViolation(name.clone()));
        }
        revealed.push(RevealedClaim { name: name.clone(), value: opening.value.clone(), salt: opening.salt });
    }
    let mut presentation = Presentation {
        v: WIRE_VERSION,
        credential: held.credential.clone(),
        revealed,
        mode,
        nonce,
        created_at: now,
        holder_signature: [0u8; 64],
    };
    presentation.holder_signature = holder_key.sign(&presentation.holder_signing_bytes()).to_bytes();
    Ok(presentation)
}

pub fn verify_presentation(
    p: &Presentation,
    issuer_pubkey: &[u8],
    expected_nonce: &[u8; 16],
    now: i64,
    policy: &DisclosurePolicy,
) -> Result<Disclosure, PresentationRejection> {
    verify_credential(&p.credential, issuer_pubkey, now).map_err(PresentationRejection::CredentialInvalid)?;

    let mut claims = BTreeMap::new();
    for claim in &p.revealed {
        if p.mode == DisclosureMode::DeIdentified && policy.is_identity_claim(&claim.name) {
            return Err(PresentationRejection::DisclosurePolicyViolation(claim.name.clone()));
        }
        let committed = p.credential.commitments.get(&claim.name);
        if committed != Some(&commitment(&claim.salt, &claim.name, &claim.value))
            || claims.insert(claim.name.clone(), claim.value.clone()).is_some()
        {
            return Err(PresentationRejection::CommitmentMismatch(claim.name.clone()));
        }
    }

    let signature = Signature::from_bytes(&p.holder_signature);
    p.credential
        .subject
        .verifying_key()
        .verify_strict(&p.holder_signing_bytes(), &signature)
        .map_err(|_| PresentationRejection::HolderSignatureInvalid)?;

    if &p.nonce != expected_nonce {
        return Err(PresentationRejection::NonceMismatch);
    }

    Ok(Disclosure {
        credential_id: p.credential.id,
        credential_type: p.credential.credential_type,
        issuer: p.credential.issuer.clone(),
        subject: p.credential.subject.clone(),
        mode: p.mode,
        expires_at: p.credential.expires_at,
        claims,
    })
}

/// UUIDs in lowercase hyphenated form only.
mod strict_uuid {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};
    use uuid::Uuid;

    pub fn serialize<S: Serializer>(id: &Uuid, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(&id.hyphenated())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Uuid, D::Error> {
        let text = String::deserialize(deserializer)?;
        let id = Uuid::parse_str(&text).map_err(D::Error::custom)?;
        if id.hyphenated().to_string() != text {
            return Err(D::Error::custom("uuid must be lowercase hyphenated"));
        }
        Ok(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NOW: i64 = 1_700_000_000;

    fn keys() -> (SigningKey, SigningKey) {
        (SigningKey::generate(&mut OsRng), SigningKey::generate(&mut OsRng))
    }

    fn identity_claims() -> ClaimSet {
        ClaimSet::from_pairs([
            ("full_name", "ANNA MARIA ERIKSSON"),
            ("date_of_birth", "1974-08-12"),
            ("status", "negative"),
        ])
        .unwrap()
    }

    fn subject_of(key: &SigningKey) -> Did {
        Did::from_verifying_key(&key.verifying_key())
    }

    #[test]
    fn empty_claim_set_issues_and_verifies() {
        let (issuer, holder) = keys();
        let held =
            issue_credential(&ClaimSet::new(), CredentialType::TestResult, &issuer, &subject_of(&holder), 60, NOW)
                .unwrap();
        assert!(held.credential.commitments.is_empty());
        assert_eq!(verify_credential(&held.credential, issuer.verifying_key().as_bytes(), NOW), Ok(()));
    }

    #[test]
    fn zero_ttl_is_rejected() {
        let (issuer, holder) = keys();
        let err = issue_credential(&ClaimSet::new(), CredentialType::Identity, &issuer, &subject_of(&holder), 0, NOW)
            .unwrap_err();
        assert_eq!(err, CredentialError::InvalidTtl(0));
    }

    #[test]
    fn claim_names_are_validated() {
        let mut set = ClaimSet::new();
        set.insert("status", "negative").unwrap();
        assert_eq!(set.insert("status", "x"), Err(CredentialError::DuplicateClaim("status".into())));
        assert!(matches!(set.insert("a\u{1f}b", "c"), Err(CredentialError::InvalidClaimName(_))));
        assert!(matches!(set.insert("", "c"), Err(CredentialError::InvalidClaimName(_))));
    }

    #[test]
    fn fresh_credential_accepts_at_issuance_and_expires_at_boundary() {
        let (issuer, holder) = keys();
        let held = issue_credential(&identity_claims(), CredentialType::Identity, &issuer, &subject_of(&holder), 100, NOW)
            .unwrap();
        let pk = issuer.verifying_key().to_bytes();
        assert_eq!(verify_credential(&held.credential, &pk, NOW), Ok(()));
        assert_eq!(verify_credential(&held.credential, &pk, NOW + 99), Ok(()));
        assert_eq!(verify_credential(&held.credential, &pk, NOW + 100), Err(CredentialRejection::Expired));
    }

    #[test]
    fn flipped_commitment_byte_breaks_signature() {
        let (issuer, holder) = keys();
        let mut held = issue_credential(&identity_claims(), CredentialType::Identity, &issuer, &subject_of(&holder), 100, NOW)
            .unwrap();
        held.credential.commitments.get_mut("status").unwrap().0[5] ^= 0x01;
        assert_eq!(
            verify_credential(&held.credential, issuer.verifying_key().as_bytes(), NOW),
            Err(CredentialRejection::BadSignature)
        );
    }

    #[test]
    fn wrong_issuer_key_is_issuer_mismatch() {
        let (issuer, holder) = keys();
        let held = issue_credential(&identity_claims(), CredentialType::Identity, &issuer, &subject_of(&holder), 100, NOW)
            .unwrap();
        assert_eq!(
            verify_credential(&held.credential, holder.verifying_key().as_bytes(), NOW),
            Err(CredentialRejection::IssuerMismatch)
        );
        assert_eq!(verify_credential(&held.credential, &[1, 2, 3], NOW), Err(CredentialRejection::IssuerMismatch));
    }

    #[test]
    fn de_identified_presentation_hides_identity_claims() {
        let (issuer, holder) = keys();
        let held = issue_credential(&identity_claims(), CredentialType::TestResult, &issuer, &subject_of(&holder), 100, NOW)
            .unwrap();
        let reveal: BTreeSet<String> = ["status".to_string()].into();
        let nonce = [9u8; 16];
        let p = derive_presentation(&held, &reveal, DisclosureMode::DeIdentified, &holder, nonce, NOW, &Default::default())
            .unwrap();
        assert_eq!(p.revealed.len(), 1);
        let text = String::from_utf8(canonical::to_vec(&p)).unwrap();
        assert!(!text.contains("ERIKSSON"));
        assert!(!text.contains("1974-08-12"));
        let disclosure =
            verify_presentation(&p, issuer.verifying_key().as_bytes(), &nonce, NOW, &Default::default()).unwrap();
        assert_eq!(disclosure.claims.get("status").map(String::as_str), Some("negative"));
    }

    #[test]
    fn identity_claim_in_de_identified_mode_is_refused() {
        let (issuer, holder) = keys();
        let held = issue_credential(&identity_claims(), CredentialType::Identity, &issuer, &subject_of(&holder), 100, NOW)
            .unwrap();
        let reveal: BTreeSet<String> = ["full_name".to_string()].into();
        let err = derive_presentation(&held, &reveal, DisclosureMode::DeIdentified, &holder, [0; 16], NOW, &Default::default())
            .unwrap_err();
        assert_eq!(err, CredentialError::DisclosurePolicyViolation("full_name".into()));
    }

    #[test]
    fn unknown_claim_and_foreign_holder_are_refused() {
        let (issuer, holder) = keys();
        let held = issue_credential(&identity_claims(), CredentialType::Identity, &issuer, &subject_of(&holder), 100, NOW)
            .unwrap();
        let reveal: BTreeSet<String> = ["address".to_string()].into();
        assert_eq!(
            derive_presentation(&held, &reveal, DisclosureMode::Identified, &holder, [0; 16], NOW, &Default::default()),
            Err(CredentialError::UnknownClaim("address".into()))
        );
        assert_eq!(
            derive_presentation(&held, &BTreeSet::new(), DisclosureMode::Identified, &issuer, [0; 16], NOW, &Default::default()),
            Err(CredentialError::HolderKeyMismatch)
        );
    }

    #[test]
    fn identified_full_disclosure_reconstructs_claims() {
        let (issuer, holder) = keys();
        let claims = identity_claims();
        let held = issue_credential(&claims, CredentialType::Identity, &issuer, &subject_of(&holder), 100, NOW).unwrap();
        let reveal: BTreeSet<String> = claims.iter().map(|(k, _)| k.to_string()).collect();
        let p = derive_presentation(&held, &reveal, DisclosureMode::Identified, &holder, [1; 16], NOW, &Default::default())
            .unwrap();
        let d = verify_presentation(&p, issuer.verifying_key().as_bytes(), &[1; 16], NOW, &Default::default()).unwrap();
        let rebuilt = ClaimSet::from_pairs(d.claims).unwrap();
        assert_eq!(rebuilt, claims);
    }

    #[test]
    fn presentation_rejections() {
        let (issuer, holder) = keys();
        let held = issue_credential(&identity_claims(), CredentialType::TestResult, &issuer, &subject_of(&holder), 100, NOW)
            .unwrap();
        let pk = issuer.verifying_key().to_bytes();
        let policy = DisclosurePolicy::default();
        let reveal: BTreeSet<String> = ["status".to_string()].into();
        let p = derive_presentation(&held, &reveal, DisclosureMode::DeIdentified, &holder, [3; 16], NOW, &policy).unwrap();

        let mut altered = p.clone();
        altered.revealed[0].value = "positive".into();
        assert_eq!(
            verify_presentation(&altered, &pk, &[3; 16], NOW, &policy),
            Err(PresentationRejection::CommitmentMismatch("status".into()))
        );

        assert_eq!(verify_presentation(&p, &pk, &[4; 16], NOW, &policy), Err(PresentationRejection::NonceMismatch));

        let mut resigned = p.clone();
        resigned.holder_signature[0] ^= 1;
        assert_eq!(
            verify_presentation(&resigned, &pk, &[3; 16], NOW, &policy),
            Err(PresentationRejection::HolderSignatureInvalid)
        );

        assert_eq!(
            verify_presentation(&p, &pk, &[3; 16], NOW + 100, &policy),
            Err(PresentationRejection::CredentialInvalid(CredentialRejection::Expired))
        );

        let mut smuggled = p.clone();
        let opening = &held.claims["full_name"];
        smuggled.revealed.push(RevealedClaim {
            name: "full_name".into(),
            value: opening.value.clone(),
            salt: opening.salt,
        });
        assert_eq!(
            verify_presentation(&smuggled, &pk, &[3; 16], NOW, &policy),
            Err(PresentationRejection::DisclosurePolicyViolation("full_name".into()))
        );

        let mut duplicated = p.clone();
        duplicated.revealed.push(p.revealed[0].clone());
        assert_eq!(
            verify_presentation(&duplicated, &pk, &[3; 16], NOW, &policy),
            Err(PresentationRejection::CommitmentMismatch("status".into()))
        );
    }

    #[test]
    fn uppercase_uuid_is_not_canonical() {
        let (issuer, holder) = keys();
        let held = issue_credential(&identity_claims(), CredentialType::Identity, &issuer, &subject_of(&holder), 100, NOW)
            .unwrap();
        let text = String::from_utf8(held.credential.to_canonical()).unwrap();
        let upper = text.replace(&held.credential.id.to_string(), &held.credential.id.to_string().to_uppercase());
        assert!(serde_json::from_str::<VerifiableCredential>(&upper).is_err());
    }
}

//! Mock FHIR hub: portal accounts, OAuth2 authorization-code flow with
//! rotating refresh tokens, patient-bound observation access, dialect
//! rationalization and anonymized export.

pub mod anonymize;
pub mod dialect;
pub mod fixtures;
pub mod terminology;

use std::collections::{BTreeSet, HashMap};
use std::sync::{Mutex, RwLock};

use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoding::{b64_decode, b64_encode};
use crate::vc::{ClaimSet, CredentialType};

pub use anonymize::{anonymize, AnonymizedExport, AnonymizedRecord, OrgKeyring};
pub use dialect::rationalize;

pub const SCOPE_OBSERVATION_READ: &str = "observation.read";
pub const SCOPE_PATIENT_READ: &str = "patient.read";
pub const DEFAULT_CODE_TTL: i64 = 60;
pub const DEFAULT_TOKEN_TTL: i64 = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeProblem {
    Unknown,
    Consumed,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FhirError {
    #[error("unknown client")]
    ClientInvalid,
    #[error("client does not match the authorization code")]
    ClientMismatch,
    #[error("portal login failed")]
    LoginFailed,
    #[error("user consent not captured")]
    ConsentMissing,
    #[error("scope denied")]
    ScopeDenied,
    #[error("authorization code invalid: {0:?}")]
    CodeInvalid(CodeProblem),
    #[error("refresh token invalid")]
    RefreshInvalid,
    #[error("access token invalid")]
    TokenInvalid,
    #[error("access token expired")]
    TokenExpired,
    #[error("token is bound to a different patient")]
    PatientMismatch,
    #[error("no registered dialect matches the payload")]
    UnmappableDialect,
    #[error("record is missing required field `{0}`")]
    IncompleteRecord(&'static str),
    #[error("code `{0}` is not in the bundled code table")]
    UnknownCode(String),
    #[error("kind and result are inconsistent")]
    InconsistentRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObservationKind {
    PcrTest,
    AntigenTest,
    AntibodyTest,
    Vaccination,
}

impl ObservationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObservationKind::PcrTest => "pcr",
            ObservationKind::AntigenTest => "antigen",
            ObservationKind::AntibodyTest => "antibody",
            ObservationKind::Vaccination => "vaccination",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObservationResult {
    Negative,
    Positive,
    Detected,
    NotDetected,
    Administered,
}

impl ObservationResult {
    pub fn as_str(self) -> &'static str {
        match self {
            ObservationResult::Negative => "negative",
            ObservationResult::Positive => "positive",
            ObservationResult::Detected => "detected",
            ObservationResult::NotDetected => "not-detected",
            ObservationResult::Administered => "administered",
        }
    }
}

/// Stable key for a source record: hex SHA-256 of dialect and source id.
pub fn observation_id(dialect: &str, source_id: &str) -> String {
    hex::encode(crate::sha256(&[dialect.as_bytes(), &[0x1f], source_id.as_bytes()]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalObservation {
    pub id: String,
    pub kind: ObservationKind,
    pub result: ObservationResult,
    pub code: String,
    pub effective_at: i64,
    pub performer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vaccine_product: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dose_number: Option<u32>,
}

impl CanonicalObservation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: String,
        kind: ObservationKind,
        result: ObservationResult,
        code: String,
        effective_at: i64,
        performer: String,
        vaccine_product: Option<String>,
        dose_number: Option<u32>,
    ) -> Result<Self, FhirError> {
        let obs = Self { id, kind, result, code, effective_at, performer, vaccine_product, dose_number };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<(), FhirError> {
        let vaccination = self.kind == ObservationKind::Vaccination;
        if vaccination != (self.result == ObservationResult::Administered) {
            return Err(FhirError::InconsistentRecord);
        }
        if vaccination != self.dose_number.is_some() || vaccination != self.vaccine_product.is_some() {
            return Err(FhirError::InconsistentRecord);
        }
        Ok(())
    }

    pub fn effective_date(&self) -> String {
        match time::OffsetDateTime::from_unix_timestamp(self.effective_at) {
            Ok(t) => format!("{:04}-{:02}-{:02}", t.year(), t.month() as u8, t.day()),
            Err(_) => "invalid".into(),
        }
    }

    pub fn credential_type(&self) -> CredentialType {
        match self.kind {
            ObservationKind::Vaccination => CredentialType::Vaccination,
            _ => CredentialType::TestResult,
        }
    }

    /// Claims for a health-status credential. `status` carries the result.
    pub fn claims(&self) -> ClaimSet {
        let mut claims = ClaimSet::from_pairs([
            ("status", self.result.as_str().to_string()),
            ("kind", self.kind.as_str().to_string()),
            ("code", self.code.clone()),
            ("effective_at", self.effective_at.to_string()),
            ("effective_date", self.effective_date()),
            ("performer", self.performer.clone()),
        ])
        .expect("fixed claim names are valid");
        if let Some(p) = &self.vaccine_product {
            claims.insert("vaccine_product", p.clone()).expect("unique name");
        }
        if let Some(d) = self.dose_number {
            claims.insert("dose_number", d.to_string()).expect("unique name");
        }
        claims
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientResource {
    #[serde(rename = "resourceType")]
    pub resource_type: String,
    pub id: String,
    pub name: String,
    #[serde(rename = "birthDate")]
    pub birth_date: String,
}

/// Issued to a client at the token endpoint. Opaque: no PII inside.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessToken {
    #[serde(with = "crate::encoding::b64")]
    pub token: [u8; 32],
    pub patient_ref: String,
    pub scope: BTreeSet<String>,
    pub issued_at: i64,
    pub expires_at: i64,
    #[serde(with = "crate::encoding::b64")]
    pub refresh_token: [u8; 32],
}

impl std::fmt::Debug for AccessToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AccessToken")
            .field("patient_ref", &self.patient_ref)
            .field("scope", &self.scope)
            .field("expires_at", &self.expires_at)
            .finish_non_exhaustive()
    }
}

impl AccessToken {
    pub fn bearer(&self) -> String {
        b64_encode(self.token)
    }

    pub fn refresh(&self) -> String {
        b64_encode(self.refresh_token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationGrant {
    pub code: String,
    pub patient_ref: String,
    pub scope: BTreeSet<String>,
    pub expires_at: i64,
}

#[derive(Debug, Clone)]
pub struct AuthorizeRequest<'a> {
    pub client_id: &'a str,
    pub scope: BTreeSet<String>,
    pub username: &'a str,
    pub password: &'a str,
    /// Scopes the user agreed to; `None` when consent was not captured.
    pub consent: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, Copy)]
pub struct HubConfig {
    pub code_ttl: i64,
    pub token_ttl: i64,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self { code_ttl: DEFAULT_CODE_TTL, token_ttl: DEFAULT_TOKEN_TTL }
    }
}

struct PortalAccount {
    salt: [u8; 16],
    password_hash: [u8; 32],
    patient_id: String,
}

struct CodeGrant {
    client_id: String,
    scope: BTreeSet<String>,
    patient_id: String,
    expires_at: i64,
    consumed: bool,
}

#[derive(Clone)]
struct TokenGrant {
    patient_id: String,
    scope: BTreeSet<String>,
    expires_at: i64,
}

struct RefreshGrant {
    client_id: String,
    patient_id: String,
    scope: BTreeSet<String>,
}

struct StoredObservation {
    effective_at: Option<i64>,
    payload: Value,
}

#[derive(Default)]
pub struct FhirHub {
    config: HubConfig,
    clients: RwLock<HashMap<String, BTreeSet<String>>>,
    accounts: RwLock<HashMap<String, PortalAccount>>,
    patients: RwLock<HashMap<String, PatientResource>>,
    observations: RwLock<HashMap<String, Vec<StoredObservation>>>,
    codes: Mutex<HashMap<String, CodeGrant>>,
    tokens: Mutex<HashMap<[u8; 32], TokenGrant>>,
    refresh_tokens: Mutex<HashMap<[u8; 32], RefreshGrant>>,
}

impl std::fmt::Debug for FhirHub {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FhirHub").field("config", &self.config).finish_non_exhaustive()
    }
}

fn password_hash(salt: &[u8; 16], password: &str) -> [u8; 32] {
    crate::sha256(&[b"dipa-portal-v1", salt, password.as_bytes()])
}

fn random32() -> [u8; 32] {
    let mut b = [0u8; 32];
    OsRng.fill_bytes(&mut b);
    b
}

fn decode32(text: &str) -> Option<[u8; 32]> {
    b64_decode(text).ok()?.try_into().ok()
}

impl FhirHub {
    pub fn new(config: HubConfig) -> Self {
        Self { config, ..Self::default() }
    }

    pub fn config(&self) -> HubConfig {
        self.config
    }

    pub fn register_client<I, S>(&self, client_id: &str, allowed_scopes: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let scopes = allowed_scopes.into_iter().map(Into::into).collect();
        self.clients.write().unwrap().insert(client_id.to_string(), scopes);
    }

    /// Creates a patient resource and portal account; returns the
    /// hub-assigned patient id.
    pub fn register_patient(&self, name: &str, birth_date: &str, username: &str, password: &str) -> String {
        let mut id_bytes = [0u8; 8];
        OsRng.fill_bytes(&mut id_bytes);
        let id = format!("pat-{}", hex::encode(id_bytes));
        let mut salt = [0u8; 16];
        OsRng.fill_bytes(&mut salt);
        self.patients.write().unwrap().insert(
            id.clone(),
            PatientResource {
                resource_type: "Patient".into(),
                id: id.clone(),
                name: name.into(),
                birth_date: birth_date.into(),
            },
        );
        self.accounts.write().unwrap().insert(
            username.to_string(),
            PortalAccount { salt, password_hash: password_hash(&salt, password), patient_id: id.clone() },
        );
        id
    }

    pub fn add_observation(&self, patient_id: &str, payload: Value) {
        let effective_at = dialect::effective_time(&payload);
        self.observations
            .write()
            .unwrap()
            .entry(patient_id.to_string())
            .or_default()
            .push(StoredObservation { effective_at, payload });
    }

    /// Portal login plus consent screen; yields a single-use code.
    pub fn authorize(&self, req: &AuthorizeRequest<'_>, now: i64) -> Result<AuthorizationGrant, FhirError> {
        let allowed = self.clients.read().unwrap().get(req.client_id).cloned().ok_or(FhirError::ClientInvalid)?;
        let patient_id = {
            let accounts = self.accounts.read().unwrap();
            let account = accounts.get(req.username).ok_or(FhirError::LoginFailed)?;
            if password_hash(&account.salt, req.password) != account.password_hash {
                return Err(FhirError::LoginFailed);
            }
            account.patient_id.clone()
        };
        let consent = req.consent.as_ref().ok_or(FhirError::ConsentMissing)?;
        if req.scope.is_empty() || !req.scope.is_subset(consent) || !req.scope.is_subset(&allowed) {
            return Err(FhirError::ScopeDenied);
        }
        let code = b64_encode(random32());
        let expires_at = now + self.config.code_ttl;
        self.codes.lock().unwrap().insert(
            code.clone(),
            CodeGrant {
                client_id: req.client_id.to_string(),
                scope: req.scope.clone(),
                patient_id: patient_id.clone(),
                expires_at,
                consumed: false,
            },
        );
        Ok(AuthorizationGrant { code, patient_ref: patient_id, scope: req.scope.clone(), expires_at })
    }

    pub fn exchange(&self, code: &str, client_id: &str, now: i64) -> Result<AccessToken, FhirError> {
        let (patient_id, scope) = {
            let mut codes = self.codes.lock().unwrap();
            let grant = codes.get_mut(code).ok_or(FhirError::CodeInvalid(CodeProblem::Unknown))?;
            if grant.consumed {
                return Err(FhirError::CodeInvalid(CodeProblem::Consumed));
            }
            if now >= grant.expires_at {
                return Err(FhirError::CodeInvalid(CodeProblem::Expired));
            }
            if grant.client_id != client_id {
                return Err(FhirError::ClientMismatch);
            }
            grant.consumed = true;
            (grant.patient_id.clone(), grant.scope.clone())
        };
        Ok(self.mint_token(client_id, patient_id, scope, now))
    }

    /// Single-use refresh: the presented refresh token is retired and a new
    /// one accompanies the new access token.
    pub fn refresh(&self, refresh_token: &str, client_id: &str, now: i64) -> Result<AccessToken, FhirError> {
        let key = decode32(refresh_token).ok_or(FhirError::RefreshInvalid)?;
        let grant = {
            let mut store = self.refresh_tokens.lock().unwrap();
            match store.get(&key) {
                Some(g) if g.client_id == client_id => store.remove(&key).expect("present"),
                Some(_) => return Err(FhirError::ClientMismatch),
                None => return Err(FhirError::RefreshInvalid),
            }
        };
        Ok(self.mint_token(client_id, grant.patient_id, grant.scope, now))
    }

    fn mint_token(&self, client_id: &str, patient_id: String, scope: BTreeSet<String>, now: i64) -> AccessToken {
        let token = random32();
        let refresh_token = random32();
        let expires_at = now + self.config.token_ttl;
        self.tokens
            .lock()
            .unwrap()
            .insert(token, TokenGrant { patient_id: patient_id.clone(), scope: scope.clone(), expires_at });
        self.refresh_tokens.lock().unwrap().insert(
            refresh_token,
            RefreshGrant { client_id: client_id.to_string(), patient_id: patient_id.clone(), scope: scope.clone() },
        );
        AccessToken { token, patient_ref: patient_id, scope, issued_at: now, expires_at, refresh_token }
    }

    fn check_token(&self, bearer: &str, scope: &str, patient: Option<&str>, now: i64) -> Result<TokenGrant, FhirError> {
        let key = decode32(bearer).ok_or(FhirError::TokenInvalid)?;
        let grant = self.tokens.lock().unwrap().get(&key).cloned().ok_or(FhirError::TokenInvalid)?;
        if now >= grant.expires_at {
            return Err(FhirError::TokenExpired);
        }
        if !grant.scope.contains(scope) {
            return Err(FhirError::ScopeDenied);
        }
        if patient.is_some_and(|p| p != grant.patient_id) {
            return Err(FhirError::PatientMismatch);
        }
        Ok(grant)
    }

    /// Patient the token was granted for (token introspection).
    pub fn introspect(&self, bearer: &str, now: i64) -> Result<String, FhirError> {
        self.check_token(bearer, SCOPE_OBSERVATION_READ, None, now).map(|g| g.patient_id)
    }

    pub fn patient(&self, bearer: &str, patient_id: &str, now: i64) -> Result<PatientResource, FhirError> {
        self.check_token(bearer, SCOPE_PATIENT_READ, Some(patient_id), now)?;
        self.patients.read().unwrap().get(patient_id).cloned().ok_or(FhirError::PatientMismatch)
    }

    /// Raw payloads for the token's patient, newest first. `since` keeps
    /// records effective at or after it; records without a readable time
    /// are always returned so rationalization can report them.
    pub fn fetch_observations(
        &self,
        bearer: &str,
        patient: Option<&str>,
        since: Option<i64>,
        now: i64,
    ) -> Result<Vec<Value>, FhirError> {
        let grant = self.check_token(bearer, SCOPE_OBSERVATION_READ, patient, now)?;
        let store = self.observations.read().unwrap();
        let mut records: Vec<&StoredObservation> = store
            .get(&grant.patient_id)
            .map(|v| v.iter().collect())
            .unwrap_or_default();
        records.retain(|r| match (since, r.effective_at) {
            (Some(s), Some(t)) => t >= s,
            _ => true,
        });
        records.sort_by_key(|r| std::cmp::Reverse(r.effective_at.unwrap_or(i64::MAX)));
        Ok(records.into_iter().map(|r| r.payload.clone()).collect())
    }
}

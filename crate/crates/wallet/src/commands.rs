//! The wallet commands. Each holder command opens the store, runs against
//! the server under a fresh session and saves the store if it changed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use base64::Engine as _;
use dipa_core::fhir::{AccessToken, AuthorizationGrant, SCOPE_OBSERVATION_READ, SCOPE_PATIENT_READ};
use dipa_core::ledger::CalendarHead;
use dipa_core::onboarding::{ConsentStatement, CONSENT_OPERATION, IDENTITY_VETTING_SCOPE};
use dipa_core::presentation::{LedgerCheck, QrMode, RejectReason};
use dipa_core::vc::{derive_presentation, CredentialType, DisclosureMode, DisclosurePolicy};
use dipa_orchestrator::policy::Decision;
use dipa_orchestrator::wire::*;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::Serialize;
use zeroize::Zeroizing;

use crate::client::{Client, ClientError, Session};
use crate::store::{HolderKeys, KdfParams, StoredCredential, WalletStore};
use crate::WalletError;

pub struct Wallet {
    client: Client,
    store: PathBuf,
    passphrase: Option<Zeroizing<String>>,
    kdf: KdfParams,
}

#[derive(Debug, Clone, Serialize)]
pub struct Onboarded {
    pub did: String,
    pub credential_id: String,
    pub expires_at: i64,
    pub ledger_seq: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EhrLinked {
    pub patient_ref: String,
    pub scope: Vec<String>,
    pub expires_at: i64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fetched {
    pub observations: usize,
    pub rejected: usize,
    pub issued: usize,
    pub total: usize,
    pub refreshed_token: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CredentialSummary {
    pub index: usize,
    pub id: String,
    pub credential_type: CredentialType,
    pub issued_at: i64,
    pub expires_at: i64,
    pub expired: bool,
    pub ledger_seq: u64,
    pub observation_id: Option<String>,
    pub claims: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresentMode {
    Identified,
    Anonymous,
}

#[derive(Debug, Clone)]
pub struct PresentOptions {
    pub mode: PresentMode,
    pub claims: Vec<String>,
    /// 1-based index from `show`, credential id, or type name.
    pub credential: Option<String>,
    pub qr: QrMode,
}

#[derive(Debug, Clone)]
pub enum HeadsSource {
    Server,
    Supplied(Vec<CalendarHead>),
    Offline,
}

/// Claim plaintexts never shown in a de-identified presentation by default.
fn default_reveal(held: &dipa_core::vc::HeldCredential, mode: PresentMode) -> BTreeSet<String> {
    let policy = DisclosurePolicy::default();
    held.claims
        .keys()
        .filter(|k| mode == PresentMode::Identified || !policy.is_identity_claim(k))
        .cloned()
        .collect()
}

fn type_name(t: CredentialType) -> &'static str {
    match t {
        CredentialType::Identity => "identity",
        CredentialType::TestResult => "test-result",
        CredentialType::Vaccination => "vaccination",
    }
}

fn all_credentials(store: &WalletStore) -> Vec<&StoredCredential> {
    store.data().identity.iter().chain(store.data().credentials.iter()).collect()
}

fn select<'a>(store: &'a WalletStore, selector: Option<&str>, mode: PresentMode) -> Result<&'a StoredCredential, WalletError> {
    let all = all_credentials(store);
    let newest = |pred: &dyn Fn(&StoredCredential) -> bool| {
        all.iter().copied().filter(|c| pred(c)).max_by_key(|c| c.credential.credential.issued_at)
    };
    let found = match selector {
        None if mode == PresentMode::Identified => newest(&|c| c.credential.credential.credential_type == CredentialType::Identity),
        None => newest(&|c| c.credential.credential.credential_type != CredentialType::Identity),
        Some(s) => {
            if let Ok(i) = s.parse::<usize>() {
                i.checked_sub(1).and_then(|i| all.get(i).copied())
            } else {
                let wanted = s.to_ascii_lowercase().replace('_', "-");
                newest(&|c| {
                    let vc = &c.credential.credential;
                    vc.id.to_string() == wanted
                        || type_name(vc.credential_type) == wanted
                        || format!("{:?}", vc.credential_type).to_ascii_lowercase() == wanted
                })
            }
        }
    };
    found.ok_or_else(|| WalletError::Usage(format!("no matching credential{}", selector.map(|s| format!(" for {s:?}")).unwrap_or_default())))
}

fn is_vetting_code(code: &str) -> bool {
    code.starts_with("Mrz") || code == "VettingRejected"
}

fn vetting(e: ClientError) -> WalletError {
    match &e {
        ClientError::Api { error, reasons, .. } if is_vetting_code(error) => {
            WalletError::Rejected { code: error.clone(), reasons: reasons.clone() }
        }
        _ => e.into(),
    }
}

impl Wallet {
    pub fn new(server: &str, store: impl Into<PathBuf>, passphrase: Option<String>) -> Self {
        Self { client: Client::new(server), store: store.into(), passphrase: passphrase.map(Zeroizing::new), kdf: KdfParams::default() }
    }

    /// Overrides the key-derivation cost for newly created stores.
    pub fn with_kdf(mut self, kdf: KdfParams) -> Self {
        self.kdf = kdf;
        self
    }

    pub fn client(&self) -> &Client {
        &self.client
    }

    fn passphrase(&self) -> Result<&str, WalletError> {
        match &self.passphrase {
            Some(p) if !p.is_empty() => Ok(p.as_str()),
            _ => Err(WalletError::NoPassphrase),
        }
    }

    fn open(&self) -> Result<WalletStore, WalletError> {
        Ok(WalletStore::open(&self.store, self.passphrase()?)?)
    }

    /// Runs `f` on the unlocked store, then persists whatever it changed,
    /// even on failure (sign counters must not go backwards).
    fn with_store<T>(
        &self,
        create: bool,
        f: impl FnOnce(&Client, &mut WalletStore) -> Result<T, WalletError>,
    ) -> Result<T, WalletError> {
        let mut store = if create {
            WalletStore::open_or_create(&self.store, self.passphrase()?, self.kdf)?
        } else {
            self.open()?
        };
        let out = f(&self.client, &mut store);
        let has_content = store.data().holder.is_some();
        if has_content {
            let saved = store.save();
            if out.is_ok() {
                saved?;
            }
        }
        out
    }

    pub fn onboard(&self, mrz: &str, document_photo: &[u8], selfie: &[u8]) -> Result<Onboarded, WalletError> {
        let lines: Vec<&str> = mrz.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let [line1, line2] = lines[..] else {
            return Err(WalletError::Usage(format!("MRZ file must hold 2 lines, found {}", lines.len())));
        };
        self.with_store(true, |client, store| {
            if store.data().identity.is_some() {
                return Err(WalletError::Usage("wallet already holds an identity credential".into()));
            }
            let info = client.issuer()?;
            let data = store.data_mut();
            let holder = match &mut data.holder {
                Some(h) => h,
                slot => {
                    let mut h = HolderKeys::generate();
                    client.register(&mut h)?;
                    slot.insert(h)
                }
            };
            let s = client.session(holder, &info.origin)?;
            let bearer = Some(s.bearer());
            let started: OnboardingStarted = client.post("/onboarding/start", bearer, &serde_json::json!({}))?;
            let id = started.onboarding_id;
            let _: Accepted = client
                .post("/onboarding/mrz", bearer, &MrzSubmit { onboarding_id: id.clone(), line1: line1.into(), line2: line2.into() })
                .map_err(vetting)?;
            let _: Accepted = client.post(
                "/onboarding/photos",
                bearer,
                &PhotosSubmit { onboarding_id: id.clone(), document_photo: document_photo.to_vec(), selfie: selfie.to_vec() },
            )?;
            let statement = ConsentStatement { subject: holder.did.clone(), scope: IDENTITY_VETTING_SCOPE.into() };
            let envelope = client.envelope(holder, &info.origin, CONSENT_OPERATION, statement.to_payload(), Some(true))?;
            let _: Accepted = client.post("/onboarding/consent", bearer, &ConsentSubmit { onboarding_id: id.clone(), envelope })?;
            let sealed: Sealed = client.post("/onboarding/finish", bearer, &OnboardingRef { onboarding_id: id }).map_err(vetting)?;
            let issued: IdentityIssued = s.open("/onboarding/finish", &sealed)?;
            let vc = &issued.credential.credential;
            let out = Onboarded {
                did: holder.did.to_string(),
                credential_id: vc.id.to_string(),
                expires_at: vc.expires_at,
                ledger_seq: issued.receipt.seq,
            };
            data.identity = Some(StoredCredential { observation_id: None, credential: issued.credential, receipt: issued.receipt });
            Ok(out)
        })
    }

    fn holder_session(client: &Client, store: &mut WalletStore) -> Result<Session, WalletError> {
        let info = client.issuer()?;
        let holder = store.data_mut().holder.as_mut().ok_or_else(|| WalletError::Usage("wallet is not onboarded".into()))?;
        Ok(client.session(holder, &info.origin)?)
    }

    pub fn link_ehr(&self, username: &str, password: &str, client_id: &str) -> Result<EhrLinked, WalletError> {
        self.with_store(false, |client, store| {
            let session = Self::holder_session(client, store)?;
            let scope = format!("{SCOPE_OBSERVATION_READ} {SCOPE_PATIENT_READ}").replace(' ', "%20");
            let basic = base64::engine::general_purpose::STANDARD.encode(format!("{username}:{password}"));
            let grant: AuthorizationGrant = client
                .get(&format!("/fhir/authorize?client_id={client_id}&scope={scope}&consent={scope}"), Some(&format!("Basic {basic}")))?;
            let sealed: Sealed = client.post(
                "/fhir/link",
                Some(session.bearer()),
                &LinkRequest { code: grant.code, client_id: client_id.into() },
            )?;
            let linked: Linked = session.open("/fhir/link", &sealed)?;
            let out = EhrLinked {
                patient_ref: linked.token.patient_ref.clone(),
                scope: linked.token.scope.iter().cloned().collect(),
                expires_at: linked.token.expires_at,
            };
            let data = store.data_mut();
            data.token = Some(linked.token);
            data.ehr_client = Some(client_id.into());
            Ok(out)
        })
    }

    /// Calls `f` with the stored access token; on `TokenExpired` refreshes
    /// once and retries.
    fn with_token<T>(
        client: &Client,
        store: &mut WalletStore,
        refreshed: &mut bool,
        f: impl Fn(&str) -> Result<T, ClientError>,
    ) -> Result<T, WalletError> {
        let token = store.data().token.as_ref().ok_or_else(|| WalletError::Usage("no EHR linked (run link-ehr)".into()))?;
        match f(&token.bearer()) {
            Err(e) if e.code() == Some("TokenExpired") && !*refreshed => {
                let request = TokenRequest {
                    grant_type: "refresh_token".into(),
                    client_id: store.data().ehr_client.clone().unwrap_or_default(),
                    code: None,
                    refresh_token: Some(token.refresh()),
                };
                let fresh: AccessToken = client.post("/fhir/token", None, &request).map_err(|r| match r.code() {
                    Some(_) => WalletError::from(e.clone()),
                    None => r.into(),
                })?;
                *refreshed = true;
                let bearer = fresh.bearer();
                store.data_mut().token = Some(fresh);
                Ok(f(&bearer)?)
            }
            other => Ok(other?),
        }
    }

    pub fn fetch(&self) -> Result<Fetched, WalletError> {
        self.with_store(false, |client, store| {
            let session = Self::holder_session(client, store)?;
            let mut refreshed = false;
            let fetched: ResultsFetched = Self::with_token(client, store, &mut refreshed, |bearer| {
                let sealed: Sealed =
                    client.post("/results/fetch", Some(session.bearer()), &ResultsFetch { access_token: bearer.into(), since: None })?;
                session.open("/results/fetch", &sealed)
            })?;
            let known: BTreeSet<&str> = store.data().credentials.iter().filter_map(|c| c.observation_id.as_deref()).collect();
            let mut wanted: Vec<String> = Vec::new();
            for o in &fetched.observations {
                if !known.contains(o.id.as_str()) && !wanted.contains(&o.id) {
                    wanted.push(o.id.clone());
                }
            }
            let mut issued = 0;
            if !wanted.is_empty() {
                let result: CredentialsIssued = Self::with_token(client, store, &mut refreshed, |bearer| {
                    let sealed: Sealed = client.post(
                        "/credentials/issue",
                        Some(session.bearer()),
                        &IssueRequest { access_token: bearer.into(), observation_ids: wanted.clone() },
                    )?;
                    session.open("/credentials/issue", &sealed)
                })?;
                issued = result.credentials.len();
                for c in result.credentials {
                    store.data_mut().credentials.push(StoredCredential {
                        observation_id: Some(c.observation_id),
                        credential: c.credential,
                        receipt: c.receipt,
                    });
                }
            }
            Ok(Fetched {
                observations: fetched.observations.len(),
                rejected: fetched.rejected,
                issued,
                total: store.data().credentials.len(),
                refreshed_token: refreshed,
            })
        })
    }

    pub fn show(&self) -> Result<Vec<CredentialSummary>, WalletError> {
        let store = self.open()?;
        let now = dipa_core::unix_now();
        Ok(all_credentials(&store)
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let vc = &c.credential.credential;
                CredentialSummary {
                    index: i + 1,
                    id: vc.id.to_string(),
                    credential_type: vc.credential_type,
                    issued_at: vc.issued_at,
                    expires_at: vc.expires_at,
                    expired: vc.is_expired(now),
                    ledger_seq: c.receipt.seq,
                    observation_id: c.observation_id.clone(),
                    claims: c.credential.claims.iter().map(|(k, v)| (k.clone(), v.value.clone())).collect(),
                }
            })
            .collect())
    }

    pub fn present(&self, opts: &PresentOptions) -> Result<Minted, WalletError> {
        self.with_store(false, |client, store| {
            let stored = select(store, opts.credential.as_deref(), opts.mode)?.clone();
            let reveal: BTreeSet<String> = if opts.claims.is_empty() {
                default_reveal(&stored.credential, opts.mode)
            } else {
                opts.claims.iter().map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect()
            };
            let mode = match opts.mode {
                PresentMode::Identified => DisclosureMode::Identified,
                PresentMode::Anonymous => DisclosureMode::DeIdentified,
            };
            let holder_key = store.data().holder.as_ref().ok_or_else(|| WalletError::Usage("wallet is not onboarded".into()))?.signing_key();
            let mut nonce = [0u8; 16];
            OsRng.fill_bytes(&mut nonce);
            let presentation = derive_presentation(
                &stored.credential,
                &reveal,
                mode,
                &holder_key,
                nonce,
                dipa_core::unix_now(),
                &DisclosurePolicy::default(),
            )?;
            let session = Self::holder_session(client, store)?;
            Ok(client
                .post(
                    "/present/mint",
                    Some(session.bearer()),
                    &MintRequest { presentation, mode: opts.qr, ledger_seq: Some(stored.receipt.seq) },
                )
                ?)
        })
    }

    /// Verifier role: needs no store.
    pub fn verify(&self, payload: &str, heads: HeadsSource, at: Option<i64>, verifier: Option<String>) -> Result<Verified, WalletError> {
        let (heads, offline) = match heads {
            HeadsSource::Server => (None, false),
            HeadsSource::Supplied(h) => (Some(h), false),
            HeadsSource::Offline => (None, true),
        };
        let req = VerifyRequest { payload: payload.trim().to_string(), heads, offline, at, verifier };
        Ok(self.client.post("/present/verify", None, &req)?)
    }

    pub fn heads_pull(&self) -> Result<Vec<CalendarHead>, WalletError> {
        let h: Heads = self.client.get("/ledger/heads", None)?;
        Ok(h.heads)
    }
}

/// Variant name of a rejection reason.
pub fn reason_code(r: &RejectReason) -> &'static str {
    match r {
        RejectReason::Malformed(_) => "Malformed",
        RejectReason::MacInvalid => "MacInvalid",
        RejectReason::Expired => "Expired",
        RejectReason::PresentationInvalid(_) => "PresentationInvalid",
        RejectReason::LedgerMismatch => "LedgerMismatch",
        RejectReason::OfflineNotAllowed => "OfflineNotAllowed",
    }
}

fn ledger_word(l: Option<LedgerCheck>) -> &'static str {
    match l {
        Some(LedgerCheck::Passed) => "passed",
        Some(LedgerCheck::Skipped) => "skipped",
        Some(LedgerCheck::Failed) => "failed",
        None => "not reached",
    }
}

/// Human rendering of a verification verdict.
pub struct Verdict<'a>(pub &'a Verified);

impl fmt::Display for Verdict<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.0.status;
        if s.is_accept() {
            writeln!(f, "outcome: accept")?;
        } else {
            let r = s.reason.as_ref();
            writeln!(f, "outcome: reject")?;
            writeln!(f, "reason: {}", r.map(|r| format!("{} ({r})", reason_code(r))).unwrap_or_default())?;
        }
        writeln!(f, "ledger_check: {}", ledger_word(s.ledger_check))?;
        if let Some(d) = &s.disclosure {
            writeln!(f, "credential_type: {:?}", d.credential_type)?;
            writeln!(f, "mode: {:?}", d.mode)?;
            writeln!(f, "expires_at: {}", d.expires_at)?;
            for (k, v) in &d.claims {
                writeln!(f, "  {k}: {v}")?;
            }
        }
        match &self.0.policy {
            Some(Decision::Allow { line }) => writeln!(f, "policy: allow (rule {line})")?,
            Some(Decision::Deny { reason, line }) => {
                writeln!(f, "policy: deny ({reason:?}{})", line.map(|l| format!(", rule {l}")).unwrap_or_default())?
            }
            None => {}
        }
        Ok(())
    }
}

impl fmt::Display for CredentialSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "[{}] {:?} {} issued {} expires {}{} ledger #{}",
            self.index,
            self.credential_type,
            self.id,
            self.issued_at,
            self.expires_at,
            if self.expired { " (expired)" } else { "" },
            self.ledger_seq
        )?;
        for (k, v) in &self.claims {
            writeln!(f, "    {k}: {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dipa_core::vc::{issue_credential, ClaimSet};
    use ed25519_dalek::SigningKey;

    #[test]
    fn anonymous_default_reveal_skips_identity_claims() {
        let issuer = SigningKey::from_bytes(&[1; 32]);
        let holder = HolderKeys::generate();
        let claims = ClaimSet::from_pairs([("full_name", "A B"), ("age", "51"), ("nationality", "UTO")]).unwrap();
        let held = issue_credential(&claims, CredentialType::Identity, &issuer, &holder.did, 100, 1000).unwrap();
        let anon = default_reveal(&held, PresentMode::Anonymous);
        assert_eq!(anon.into_iter().collect::<Vec<_>>(), ["age", "nationality"]);
        assert_eq!(default_reveal(&held, PresentMode::Identified).len(), 3);
    }

    #[test]
    fn vetting_codes_map_to_rejection() {
        let api = |code: &str| ClientError::Api { status: 422, error: code.into(), detail: String::new(), reasons: vec!["FaceMismatch".into()] };
        assert!(matches!(vetting(api("MrzChecksum")), WalletError::Rejected { .. }));
        assert!(matches!(vetting(api("VettingRejected")), WalletError::Rejected { reasons, .. } if reasons == ["FaceMismatch"]));
        assert!(matches!(vetting(api("ConsentMissing")), WalletError::Server(_)));
    }
}

//! Shared server state.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use dipa_core::authn::session::SessionKey;
use dipa_core::authn::{AuthnConfig, AuthnError, RelyingParty};
use dipa_core::fhir::anonymize::pseudonym;
use dipa_core::fhir::fixtures::{self, SeededPatients};
use dipa_core::fhir::{AnonymizedExport, FhirHub, OrgKeyring};
use dipa_core::ledger::{Ledger, LedgerError};
use dipa_core::onboarding::vetting::{DigestFaceMatcher, FaceMatcher, IssuingAuthority, MockAuthority};
use dipa_core::onboarding::IdentitySession;
use dipa_core::presentation::KeyRegistry;
use dipa_core::Did;
use ed25519_dalek::SigningKey;
use zeroize::Zeroizing;

use crate::audit::{AuditError, AuditLog, NewEvent};
use crate::config::ServerConfig;
use crate::policy::{Policy, PolicyParseError};
use crate::secrets::{FileSecrets, SecretError, AUDIT_SECRET, ISSUER_KEY, PSEUDONYM_SECRET};
use crate::workflow::Engine;
use crate::workflows::{self, Outbox};

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Secret(#[from] SecretError),
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("audit log: {0}")]
    Audit(#[from] AuditError),
    #[error("policy file: {0}")]
    Policy(#[from] PolicyParseError),
    #[error("authority file: {0}")]
    Authority(String),
    #[error("authenticator records: {0}")]
    Authn(#[from] AuthnError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> StartupError {
    let path = path.into();
    move |source| StartupError::Io { path, source }
}

pub struct LiveSession {
    pub key: SessionKey,
    pub user_id: String,
    pub expires_at: i64,
}

pub struct PendingOnboarding {
    pub owner: String,
    pub session: IdentitySession,
    pub expires_at: i64,
}

pub struct AppState {
    pub config: ServerConfig,
    pub issuer_key: SigningKey,
    pub issuer_did: Did,
    pub ledger: Ledger,
    pub rp: RelyingParty,
    pub hub: FhirHub,
    pub seeded: Option<SeededPatients>,
    pub registry: KeyRegistry,
    pub audit: AuditLog,
    pub policy: Policy,
    pub engine: Engine,
    pub authority: Box<dyn IssuingAuthority>,
    pub face: Box<dyn FaceMatcher>,
    pub keyring: OrgKeyring,
    pub export: AnonymizedExport,
    audit_key: Zeroizing<[u8; 32]>,
    authn_path: PathBuf,
    authn_write: Mutex<()>,
    pub sessions: Mutex<HashMap<[u8; 16], LiveSession>>,
    pub onboarding: Mutex<HashMap<String, PendingOnboarding>>,
    pub outbox: Mutex<HashMap<u64, Outbox>>,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState").field("issuer", &self.issuer_did).field("data_dir", &self.config.data_dir).finish()
    }
}

pub const LEDGER_DIR: &str = "ledger";
pub const AUDIT_DIR: &str = "audit";
pub const EXPORT_DIR: &str = "export";
pub const AUTHN_FILE: &str = "authenticators.json";

impl AppState {
    pub fn new(config: ServerConfig) -> Result<Arc<Self>, StartupError> {
        let now = dipa_core::unix_now();
        let data = config.data_dir.clone();
        fs::create_dir_all(&data).map_err(io(&data))?;
        let secrets = FileSecrets::open(&config.secrets_dir)?;
        let issuer_key = SigningKey::from_bytes(&*secrets.load_or_create::<32>(ISSUER_KEY)?);
        let issuer_did = Did::from_verifying_key(&issuer_key.verifying_key());
        let keyring = OrgKeyring::new(*secrets.load_or_create::<32>(PSEUDONYM_SECRET)?, config.credentials.pseudonym_epoch);
        let audit_key = secrets.load_or_create::<32>(AUDIT_SECRET)?;

        let ledger = Ledger::open(data.join(LEDGER_DIR), config.ledger_config())?;
        let audit = AuditLog::open(data.join(AUDIT_DIR))?;
        let export = AnonymizedExport::new(data.join(EXPORT_DIR));

        let authn_path = data.join(AUTHN_FILE);
        let authn_config = AuthnConfig { challenge_ttl: config.session.challenge_ttl };
        let rp = match fs::read(&authn_path) {
            Ok(bytes) => RelyingParty::restore(authn_config, &bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => RelyingParty::new(authn_config),
            Err(e) => return Err(io(&authn_path)(e)),
        };

        let policy = match &config.policy_file {
            Some(p) => Policy::parse(&fs::read_to_string(p).map_err(io(p))?)?,
            None => Policy::default(),
        };
        let authority = match &config.authority_file {
            Some(p) => MockAuthority::parse(&fs::read_to_string(p).map_err(io(p))?).map_err(StartupError::Authority)?,
            None => MockAuthority::new(),
        };

        let registry = KeyRegistry::new(config.presentation_config(), policy.disclosure_policy(), now);
        registry.trust_issuer(issuer_did.clone());

        let hub = FhirHub::new(config.hub_config());
        let seeded = config.seed_demo_hub.then(|| fixtures::seed(&hub));
        let engine = Engine::new(config.workflow_seed);

        let state = Arc::new_cyclic(|weak| {
            workflows::install(&engine, weak.clone());
            AppState {
                config,
                issuer_key,
                issuer_did,
                ledger,
                rp,
                hub,
                seeded,
                registry,
                audit,
                policy,
                engine,
                authority: Box::new(authority),
                face: Box::new(DigestFaceMatcher),
                keyring,
                export,
                audit_key,
                authn_path,
                authn_write: Mutex::new(()),
                sessions: Mutex::default(),
                onboarding: Mutex::default(),
                outbox: Mutex::default(),
            }
        });
        Ok(state)
    }

    /// Stable per-deployment pseudonym for audit actors.
    pub fn actor(&self, user_id: &str) -> String {
        hex::encode(pseudonym(&self.audit_key, user_id))
    }

    pub fn record(&self, event: NewEvent) -> Option<u64> {
        match self.audit.record(event) {
            Ok(seq) => Some(seq),
            Err(e) => {
                tracing::error!(error = %e, "audit write failed");
                None
            }
        }
    }

    pub fn persist_authenticators(&self) -> std::io::Result<()> {
        let _guard = self.authn_write.lock().unwrap();
        let tmp = self.authn_path.with_extension("json.tmp");
        fs::write(&tmp, self.rp.snapshot())?;
        fs::rename(&tmp, &self.authn_path)
    }

    pub fn take_outbox(&self, instance: u64) -> Option<Outbox> {
        self.outbox.lock().unwrap().remove(&instance)
    }

    /// Drops expired sessions and abandoned onboarding inputs.
    pub fn sweep(&self, now: i64) {
        self.sessions.lock().unwrap().retain(|_, s| now < s.expires_at);
        self.onboarding.lock().unwrap().retain(|_, p| now < p.expires_at);
    }
}

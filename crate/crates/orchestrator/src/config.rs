//! Server configuration: one TOML file plus `DIPA_*` environment overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use dipa_core::fhir::HubConfig;
use dipa_core::ledger::LedgerConfig;
use dipa_core::presentation::{OfflinePolicy, PresentationConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("environment variable {name}={value:?} is invalid")]
    Env { name: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Everything the server persists lives here.
    pub data_dir: PathBuf,
    /// File-backed secrets (issuer key, pseudonym secret).
    pub secrets_dir: PathBuf,
    pub authority_file: Option<PathBuf>,
    pub policy_file: Option<PathBuf>,
    /// Origin that client envelopes must carry.
    pub origin: String,
    pub seed_demo_hub: bool,
    pub workflow_seed: u64,
    pub ledger: LedgerSection,
    pub qr: QrSection,
    pub onboarding: OnboardingSection,
    pub credentials: CredentialSection,
    pub fhir: FhirSection,
    pub session: SessionSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerSection {
    pub max_batch: usize,
    pub max_age_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QrSection {
    pub dynamic_ttl: i64,
    pub grace: i64,
    pub offline: OfflinePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnboardingSection {
    pub face_threshold: f64,
    pub identity_ttl: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CredentialSection {
    pub result_ttl: i64,
    pub pseudonym_epoch: i64,
    pub export_org: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FhirSection {
    pub code_ttl: i64,
    pub token_ttl: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSection {
    pub challenge_ttl: i64,
    pub session_ttl: i64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8700".into(),
            data_dir: "dipa-data".into(),
            secrets_dir: "dipa-secrets".into(),
            authority_file: None,
            policy_file: None,
            origin: "https://dipa.local".into(),
            seed_demo_hub: true,
            workflow_seed: 0x5eed,
            ledger: LedgerSection::default(),
            qr: QrSection::default(),
            onboarding: OnboardingSection::default(),
            credentials: CredentialSection::default(),
            fhir: FhirSection::default(),
            session: SessionSection::default(),
        }
    }
}

impl Default for LedgerSection {
    fn default() -> Self {
        let d = LedgerConfig::default();
        Self { max_batch: d.max_batch, max_age_ms: d.max_age.as_millis() as u64 }
    }
}

impl Default for QrSection {
    fn default() -> Self {
        let d = PresentationConfig::default();
        Self { dynamic_ttl: d.dynamic_ttl, grace: d.grace, offline: d.offline }
    }
}

impl Default for OnboardingSection {
    fn default() -> Self {
        Self {
            face_threshold: dipa_core::onboarding::vetting::DEFAULT_FACE_THRESHOLD,
            identity_ttl: dipa_core::onboarding::DEFAULT_IDENTITY_TTL,
        }
    }
}

impl Default for CredentialSection {
    fn default() -> Self {
        Self {
            result_ttl: 30 * 86_400,
            pseudonym_epoch: dipa_core::fhir::anonymize::DEFAULT_EPOCH_SECONDS,
            export_org: "public-health".into(),
        }
    }
}

impl Default for FhirSection {
    fn default() -> Self {
        let d = HubConfig::default();
        Self { code_ttl: d.code_ttl, token_ttl: d.token_ttl }
    }
}

impl Default for SessionSection {
    fn default() -> Self {
        Self { challenge_ttl: dipa_core::authn::DEFAULT_CHALLENGE_TTL, session_ttl: 900 }
    }
}

fn set<T: FromStr>(target: &mut T, name: &str, lookup: &impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
    if let Some(value) = lookup(name) {
        *target = value.parse().map_err(|_| ConfigError::Env { name: name.into(), value })?;
    }
    Ok(())
}

fn set_opt(target: &mut Option<PathBuf>, name: &str, lookup: &impl Fn(&str) -> Option<String>) {
    if let Some(value) = lookup(name) {
        *target = (!value.is_empty()).then(|| value.into());
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Loads `path` (defaults when `None`) and applies process env overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.into(), source })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        set(&mut self.bind, "DIPA_BIND", &lookup)?;
        set(&mut self.data_dir, "DIPA_DATA_DIR", &lookup)?;
        set(&mut self.secrets_dir, "DIPA_SECRETS_DIR", &lookup)?;
        set_opt(&mut self.authority_file, "DIPA_AUTHORITY_FILE", &lookup);
        set_opt(&mut self.policy_file, "DIPA_POLICY_FILE", &lookup);
        set(&mut self.origin, "DIPA_ORIGIN", &lookup)?;
        set(&mut self.seed_demo_hub, "DIPA_SEED_DEMO_HUB", &lookup)?;
        set(&mut self.ledger.max_batch, "DIPA_LEDGER_MAX_BATCH", &lookup)?;
        set(&mut self.ledger.max_age_ms, "DIPA_LEDGER_MAX_AGE_MS", &lookup)?;
        set(&mut self.qr.dynamic_ttl, "DIPA_QR_TTL", &lookup)?;
        set(&mut self.qr.grace, "DIPA_QR_GRACE", &lookup)?;
        if let Some(value) = lookup("DIPA_QR_OFFLINE") {
            self.qr.offline = match value.as_str() {
                "acceptflagged" | "accept-flagged" => OfflinePolicy::AcceptFlagged,
                "reject" => OfflinePolicy::Reject,
                _ => return Err(ConfigError::Env { name: "DIPA_QR_OFFLINE".into(), value }),
            };
        }
        set(&mut self.onboarding.face_threshold, "DIPA_FACE_THRESHOLD", &lookup)?;
        set(&mut self.onboarding.identity_ttl, "DIPA_IDENTITY_TTL", &lookup)?;
        set(&mut self.credentials.result_ttl, "DIPA_RESULT_TTL", &lookup)?;
        set(&mut self.fhir.code_ttl, "DIPA_CODE_TTL", &lookup)?;
        set(&mut self.fhir.token_ttl, "DIPA_TOKEN_TTL", &lookup)?;
        set(&mut self.session.challenge_ttl, "DIPA_CHALLENGE_TTL", &lookup)?;
        set(&mut self.session.session_ttl, "DIPA_SESSION_TTL", &lookup)?;
        Ok(())
    }

    pub fn ledger_config(&self) -> LedgerConfig {
        LedgerConfig { max_batch: self.ledger.max_batch, max_age: Duration::from_millis(self.ledger.max_age_ms) }
    }

    pub fn presentation_config(&self) -> PresentationConfig {
        PresentationConfig { dynamic_ttl: self.qr.dynamic_ttl, grace: self.qr.grace, offline: self.qr.offline }
    }

    pub fn hub_config(&self) -> HubConfig {
        HubConfig { code_ttl: self.fhir.code_ttl, token_ttl: self.fhir.token_ttl }
    }
}

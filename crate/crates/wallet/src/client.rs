//! Blocking HTTP client for the orchestrator API.

use std::time::Duration;

use dipa_core::authn::session::{self, ClientHandshake, SessionKey};
use dipa_core::authn::{Attestation, ClientContext, SignedEnvelope};
use dipa_orchestrator::api::session_bearer;
use dipa_orchestrator::wire::*;
use rand::rngs::OsRng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::store::HolderKeys;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ClientError {
    #[error("server unreachable: {0}")]
    Network(String),
    #[error("{error} ({status}): {detail}")]
    Api { status: u16, error: String, detail: String, reasons: Vec<String> },
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    /// Error code reported by the server, if any.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { error, .. } => Some(error),
            _ => None,
        }
    }
}

pub struct Client {
    base: String,
    agent: ureq::Agent,
}

/// Authenticated, encrypted channel for one command.
pub struct Session {
    key: SessionKey,
    bearer: String,
}

impl Session {
    pub fn bearer(&self) -> &str {
        &self.bearer
    }

    pub fn open<T: DeserializeOwned>(&self, route: &str, sealed: &Sealed) -> Result<T, ClientError> {
        let plain = session::open(&self.key, route.as_bytes(), &sealed.sealed)
            .map_err(|e| ClientError::Decode(format!("sealed response: {e}")))?;
        serde_json::from_slice(&plain).map_err(|e| ClientError::Decode(e.to_string()))
    }
}

fn map_error(e: ureq::Error) -> ClientError {
    match e {
        ureq::Error::Status(status, resp) => match resp.into_json::<ErrorBody>() {
            Ok(b) => ClientError::Api { status, error: b.error, detail: b.detail, reasons: b.reasons },
            Err(_) => ClientError::Api { status, error: "HttpError".into(), detail: String::new(), reasons: vec![] },
        },
        ureq::Error::Transport(t) => ClientError::Network(t.to_string()),
    }
}

fn decode<R: DeserializeOwned>(resp: ureq::Response) -> Result<R, ClientError> {
    resp.into_json().map_err(|e| ClientError::Decode(e.to_string()))
}

impl Client {
    pub fn new(base: &str) -> Self {
        let agent = ureq::AgentBuilder::new().timeout_connect(Duration::from_secs(3)).timeout(Duration::from_secs(30)).build();
        Self { base: base.trim_end_matches('/').to_string(), agent }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, auth: Option<&str>, body: &B) -> Result<R, ClientError> {
        let mut req = self.agent.post(&format!("{}{path}", self.base));
        if let Some(a) = auth {
            req = req.set("Authorization", a);
        }
        decode(req.send_json(body).map_err(map_error)?)
    }

    pub fn get<R: DeserializeOwned>(&self, path: &str, auth: Option<&str>) -> Result<R, ClientError> {
        let mut req = self.agent.get(&format!("{}{path}", self.base));
        if let Some(a) = auth {
            req = req.set("Authorization", a);
        }
        decode(req.call().map_err(map_error)?)
    }

    pub fn issuer(&self) -> Result<IssuerInfo, ClientError> {
        self.get("/issuer", None)
    }

    /// Registers the holder's authenticator under its DID.
    pub fn register(&self, holder: &mut HolderKeys) -> Result<(), ClientError> {
        let user_id = holder.did.to_string();
        let c: ChallengeIssued = self.post("/auth/register/begin", None, &RegisterBegin { user_id: user_id.clone() })?;
        let attestation = Attestation::create(&holder.authenticator(), &c.challenge, &user_id);
        let r: Registered = self.post("/auth/register/finish", None, &RegisterFinish { user_id, attestation })?;
        holder.credential_id = r.credential_id;
        holder.counter = 0;
        Ok(())
    }

    /// Fetches a challenge for `operation` and signs `payload` against it.
    pub fn envelope(
        &self,
        holder: &mut HolderKeys,
        origin: &str,
        operation: &str,
        payload: Vec<u8>,
        liveness: Option<bool>,
    ) -> Result<SignedEnvelope, ClientError> {
        let c: ChallengeIssued = self
            .post("/auth/assert/begin", None, &AssertBegin { user_id: holder.did.to_string(), operation: operation.into() })?;
        holder.counter += 1;
        let mut ctx = ClientContext::new(origin, operation, dipa_core::unix_now());
        ctx.liveness = liveness;
        Ok(SignedEnvelope::sign(&holder.authenticator(), holder.credential_id, c.challenge, ctx, payload, holder.counter))
    }

    pub fn session(&self, holder: &mut HolderKeys, origin: &str) -> Result<Session, ClientError> {
        let hs = ClientHandshake::new(&mut OsRng);
        let envelope = self.envelope(holder, origin, SESSION_OPERATION, hs.public().to_vec(), None)?;
        let challenge = envelope.challenge;
        let a: Asserted = self.post("/auth/assert/finish", None, &AssertFinish { envelope })?;
        let hello = a.hello.ok_or_else(|| ClientError::Decode("session hello missing".into()))?;
        let key = hs.finish(&challenge, &hello).map_err(|e| ClientError::Decode(format!("handshake: {e}")))?;
        let bearer = session_bearer(&key.session_id);
        Ok(Session { key, bearer })
    }
}

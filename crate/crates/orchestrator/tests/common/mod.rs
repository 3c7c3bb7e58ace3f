#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dipa_core::authn::session::{self, ClientHandshake, SessionKey};
use dipa_core::authn::{Attestation, ClientContext, SignedEnvelope};
use dipa_core::onboarding::{ConsentStatement, Td3Document, IDENTITY_VETTING_SCOPE};
use dipa_core::Did;
use dipa_orchestrator::api::session_bearer;
use dipa_orchestrator::wire::*;
use dipa_orchestrator::{ServerConfig, ServerHandle};
use ed25519_dalek::SigningKey;
use rand::rngs::OsRng;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const ORIGIN: &str = "https://dipa.test";
pub const DEMO_DOC_NUMBER: &str = "L898902C3";

pub type Failure = (u16, ErrorBody);

pub struct Api {
    pub base: String,
    agent: ureq::Agent,
}

fn failure(e: ureq::Error) -> Failure {
    match e {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_json::<ErrorBody>().unwrap_or(ErrorBody {
                error: "Unparseable".into(),
                detail: String::new(),
                reasons: vec![],
            });
            (code, body)
        }
        other => panic!("transport error: {other}"),
    }
}

impl Api {
    pub fn new(base: String) -> Self {
        Self { base, agent: ureq::AgentBuilder::new().build() }
    }

    pub fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, auth: Option<&str>, body: &B) -> Result<R, Failure> {
        let mut req = self.agent.post(&format!("{}{path}", self.base));
        if let Some(a) = auth {
            req = req.set("Authorization", a);
        }
        req.send_json(body).map_err(failure).map(|r| r.into_json().expect("json response"))
    }

    pub fn get<R: DeserializeOwned>(&self, path: &str, auth: Option<&str>) -> Result<R, Failure> {
        let mut req = self.agent.get(&format!("{}{path}", self.base));
        if let Some(a) = auth {
            req = req.set("Authorization", a);
        }
        req.call().map_err(failure).map(|r| r.into_json().expect("json response"))
    }

    pub fn status(&self, path: &str) -> u16 {
        match self.agent.get(&format!("{}{path}", self.base)).call() {
            Ok(r) => r.status(),
            Err(ureq::Error::Status(code, _)) => code,
            Err(e) => panic!("{e}"),
        }
    }
}

pub struct Holder {
    pub key: SigningKey,
    pub authenticator: SigningKey,
    pub did: Did,
    pub credential_id: [u8; 16],
    pub counter: u64,
}

pub struct Session {
    pub key: SessionKey,
    pub bearer: String,
}

impl Holder {
    pub fn register(api: &Api) -> Self {
        let key = SigningKey::generate(&mut OsRng);
        let authenticator = SigningKey::generate(&mut OsRng);
        let did = Did::from_verifying_key(&key.verifying_key());
        let user_id = did.to_string();
        let c: ChallengeIssued = api.post("/auth/register/begin", None, &RegisterBegin { user_id: user_id.clone() }).unwrap();
        let attestation = Attestation::create(&authenticator, &c.challenge, &user_id);
        let r: Registered = api.post("/auth/register/finish", None, &RegisterFinish { user_id, attestation }).unwrap();
        Self { key, authenticator, did, credential_id: r.credential_id, counter: 0 }
    }

    pub fn challenge(&self, api: &Api, operation: &str) -> [u8; 32] {
        let c: ChallengeIssued = api
            .post("/auth/assert/begin", None, &AssertBegin { user_id: self.did.to_string(), operation: operation.into() })
            .unwrap();
        c.challenge
    }

    pub fn sign(&mut self, challenge: [u8; 32], operation: &str, payload: Vec<u8>) -> SignedEnvelope {
        self.counter += 1;
        let ctx = ClientContext::new(ORIGIN, operation, dipa_core::unix_now());
        SignedEnvelope::sign(&self.authenticator, self.credential_id, challenge, ctx, payload, self.counter)
    }

    pub fn envelope(&mut self, api: &Api, operation: &str, payload: Vec<u8>) -> SignedEnvelope {
        let challenge = self.challenge(api, operation);
        self.sign(challenge, operation, payload)
    }

    pub fn session(&mut self, api: &Api) -> Session {
        let hs = ClientHandshake::new(&mut OsRng);
        let envelope = self.envelope(api, SESSION_OPERATION, hs.public().to_vec());
        let challenge = envelope.challenge;
        let a: Asserted = api.post("/auth/assert/finish", None, &AssertFinish { envelope }).unwrap();
        let key = hs.finish(&challenge, &a.hello.expect("session hello")).unwrap();
        let bearer = session_bearer(&key.session_id);
        Session { key, bearer }
    }

    pub fn consent(&mut self, api: &Api) -> SignedEnvelope {
        let statement = ConsentStatement { subject: self.did.clone(), scope: IDENTITY_VETTING_SCOPE.into() };
        let challenge = self.challenge(api, "consent");
        self.counter += 1;
        let mut ctx = ClientContext::new(ORIGIN, "consent", dipa_core::unix_now());
        ctx.liveness = Some(true);
        SignedEnvelope::sign(&self.authenticator, self.credential_id, challenge, ctx, statement.to_payload(), self.counter)
    }
}

pub fn open<T: DeserializeOwned>(session: &Session, route: &str, sealed: &Sealed) -> T {
    let plain = session::open(&session.key, route.as_bytes(), &sealed.sealed).expect("sealed to this session");
    serde_json::from_slice(&plain).unwrap()
}

pub fn demo_document() -> Td3Document {
    Td3Document {
        issuing_state: "UTO".into(),
        surname: "ERIKSSON".into(),
        given_names: "ANNA MARIA".into(),
        document_number: DEMO_DOC_NUMBER.into(),
        nationality: "UTO".into(),
        birth_date: "740812".into(),
        sex: 'F',
        expiry_date: "340415".into(),
        optional_data: "ZE184226B".into(),
    }
}

pub struct TestServer {
    pub handle: ServerHandle,
    pub api: Api,
    pub data: PathBuf,
    pub secrets: PathBuf,
    _dirs: Vec<tempfile::TempDir>,
}

pub fn config(data: &Path, secrets: &Path, authority: &Path) -> ServerConfig {
    let mut c = ServerConfig::default();
    c.bind = "127.0.0.1:0".into();
    c.data_dir = data.into();
    c.secrets_dir = secrets.into();
    c.authority_file = Some(authority.into());
    c.origin = ORIGIN.into();
    c.ledger.max_age_ms = 100;
    c
}

pub fn start_with(adjust: impl FnOnce(&mut ServerConfig)) -> TestServer {
    let data = tempfile::tempdir().unwrap();
    let secrets = tempfile::tempdir().unwrap();
    let external = tempfile::tempdir().unwrap();
    let authority = external.path().join("authority.txt");
    std::fs::write(&authority, format!("{DEMO_DOC_NUMBER} confirmed\nX00000000 revoked\n")).unwrap();
    let policy = external.path().join("policy.txt");
    std::fs::write(&policy, "allow verifier=stadium credential=TestResult result=negative\ndeny verifier=stadium\n").unwrap();
    let mut c = config(data.path(), secrets.path(), &authority);
    c.policy_file = Some(policy);
    adjust(&mut c);
    let handle = dipa_orchestrator::spawn(c).unwrap();
    let api = Api::new(handle.url());
    TestServer {
        handle,
        api,
        data: data.path().into(),
        secrets: secrets.path().into(),
        _dirs: vec![data, secrets, external],
    }
}

impl TestServer {
    /// Stops the server, keeping its directories until drop.
    pub fn stop(self) -> Vec<tempfile::TempDir> {
        self.handle.shutdown();
        self._dirs
    }
}

pub fn start() -> TestServer {
    start_with(|_| {})
}

/// Runs onboarding up to (not including) finish.
pub fn prepare_onboarding(api: &Api, holder: &mut Holder, s: &Session, doc: &Td3Document, selfie: &[u8]) -> String {
    let started: OnboardingStarted = api.post("/onboarding/start", Some(&s.bearer), &serde_json::json!({})).unwrap();
    let id = started.onboarding_id;
    let (line1, line2) = doc.to_lines();
    let _: Accepted = api
        .post("/onboarding/mrz", Some(&s.bearer), &MrzSubmit { onboarding_id: id.clone(), line1, line2 })
        .unwrap();
    let _: Accepted = api
        .post(
            "/onboarding/photos",
            Some(&s.bearer),
            &PhotosSubmit { onboarding_id: id.clone(), document_photo: b"portrait".to_vec(), selfie: selfie.to_vec() },
        )
        .unwrap();
    let envelope = holder.consent(api);
    let _: Accepted =
        api.post("/onboarding/consent", Some(&s.bearer), &ConsentSubmit { onboarding_id: id.clone(), envelope }).unwrap();
    id
}

/// Every file under `dir`, recursively.
pub fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out
}

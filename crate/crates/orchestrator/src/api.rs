//! HTTP routes.

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use dipa_core::authn::session::{self, SessionKey};
use dipa_core::authn::SignedEnvelope;
use dipa_core::encoding::{b64_decode, b64_encode};
use dipa_core::fhir::{AuthorizeRequest, CodeProblem, FhirError};
use dipa_core::ledger::LedgerError;
use dipa_core::onboarding::{verify_consent, IdentitySession, IDENTITY_VETTING_SCOPE};
use dipa_core::presentation::{decode_qr, mint_qr, verify_qr, LedgerRef, PresentationError};
use dipa_core::vc::verify_presentation;
use dipa_core::{unix_now, Did};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audit::{AuditQuery, NewEvent};
use crate::policy::PolicyContext;
use crate::state::{AppState, LiveSession, PendingOnboarding};
use crate::wire::*;
use crate::workflow::InstanceState;
use crate::workflows::{code_of, reason, variant, Outbox, ISSUANCE, ONBOARDING, RESULTS};

type Shared = State<Arc<AppState>>;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, error: impl Into<String>, detail: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: error.into(), detail: detail.into(), reasons: Vec::new() } }
    }

    fn from_reason(reason: &str) -> Self {
        let code = code_of(reason);
        let detail = reason.strip_prefix(code).unwrap_or("").trim_start_matches(':').trim();
        Self::new(status_for(code), code, detail)
    }

    fn unauthorized(detail: &str) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "SessionInvalid", detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// HTTP status for an error code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "TokenExpired" | "TokenInvalid" | "SessionInvalid" | "ChallengeInvalid" | "SignatureInvalid"
        | "CounterRegression" | "OriginMismatch" | "AttestationInvalid" | "UnknownUser" => StatusCode::UNAUTHORIZED,
        "ScopeDenied" | "PatientMismatch" | "ClientInvalid" | "ClientMismatch" | "LoginFailed" | "ConsentMissing"
        | "NotOwner" => StatusCode::FORBIDDEN,
        "UnknownOnboarding" | "UnknownSeq" | "NotFound" => StatusCode::NOT_FOUND,
        "OracleUnavailable" => StatusCode::SERVICE_UNAVAILABLE,
        "PayloadTooLarge" => StatusCode::PAYLOAD_TOO_LARGE,
        "CodeInvalid" | "CodeConsumed" | "CodeExpired" | "RefreshInvalid" | "BadRequest" => StatusCode::BAD_REQUEST,
        "Internal" | "Ledger" | "Io" | "ServerStopping" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

fn fhir_error(e: &FhirError) -> ApiError {
    let code = match e {
        FhirError::CodeInvalid(CodeProblem::Consumed) => "CodeConsumed".to_string(),
        FhirError::CodeInvalid(CodeProblem::Expired) => "CodeExpired".to_string(),
        other => variant(other),
    };
    ApiError::new(status_for(&code), code, e.to_string())
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/issuer", get(issuer))
        .route("/auth/register/begin", post(register_begin))
        .route("/auth/register/finish", post(register_finish))
        .route("/auth/assert/begin", post(assert_begin))
        .route("/auth/assert/finish", post(assert_finish))
        .route("/onboarding/start", post(onboarding_start))
        .route("/onboarding/mrz", post(onboarding_mrz))
        .route("/onboarding/photos", post(onboarding_photos))
        .route("/onboarding/consent", post(onboarding_consent))
        .route("/onboarding/finish", post(onboarding_finish))
        .route("/fhir/authorize", get(fhir_authorize))
        .route("/fhir/token", post(fhir_token))
        .route("/fhir/Patient/{id}", get(fhir_patient))
        .route("/fhir/Observation", get(fhir_observation))
        .route("/fhir/link", post(fhir_link))
        .route("/results/fetch", post(results_fetch))
        .route("/credentials/issue", post(credentials_issue))
        .route("/present/mint", post(present_mint))
        .route("/present/verify", post(present_verify))
        .route("/push/register", post(push_register))
        .route("/push/queue", get(push_queue))
        .route("/ledger/heads", get(ledger_heads))
        .route("/ledger/proof/{seq}", get(ledger_proof))
        .route("/audit/search", get(audit_search))
        .route("/audit/report", get(audit_report))
        .route("/metrics/{workflow}", get(metrics))
        .route("/policy/eval", post(policy_eval))
        .with_state(state)
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

fn session(state: &AppState, headers: &HeaderMap) -> Result<(SessionKey, String), ApiError> {
    let id: [u8; 16] = bearer(headers)
        .and_then(|b| b64_decode(b).ok())
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| ApiError::unauthorized("missing or malformed session bearer"))?;
    let sessions = state.sessions.lock().unwrap();
    let live = sessions.get(&id).filter(|s| unix_now() < s.expires_at).ok_or_else(|| ApiError::unauthorized("session unknown or expired"))?;
    Ok((live.key.clone(), live.user_id.clone()))
}

/// Encrypts a response body to the session; the route path is the AAD.
fn sealed<T: Serialize>(key: &SessionKey, route: &str, body: &T) -> Json<Sealed> {
    let plain = zeroize::Zeroizing::new(serde_json::to_vec(body).expect("wire types serialize"));
    Json(Sealed { sealed: session::seal(key, route.as_bytes(), &plain, &mut OsRng) })
}

async fn run_workflow(state: &Arc<AppState>, name: &str, input: Value) -> Result<(InstanceState, Option<Outbox>), ApiError> {
    let id = state.engine.start(name, input, unix_now()).map_err(internal)?;
    let st = state.clone();
    let instance = tokio::task::spawn_blocking(move || st.engine.run(id)).await.map_err(internal)?.map_err(internal)?;
    Ok((instance.state, state.take_outbox(id)))
}

async fn issuer(State(s): Shared) -> Json<IssuerInfo> {
    Json(IssuerInfo { did: s.issuer_did.to_string(), origin: s.config.origin.clone(), qr_ttl: s.config.qr.dynamic_ttl })
}

async fn register_begin(State(s): Shared, Json(req): Json<RegisterBegin>) -> ApiResult<ChallengeIssued> {
    let c = s.rp.begin_registration(&req.user_id, unix_now());
    Ok(Json(ChallengeIssued { challenge: c.value, expires_at: c.issued_at + c.ttl_seconds }))
}

async fn register_finish(State(s): Shared, Json(req): Json<RegisterFinish>) -> ApiResult<Registered> {
    let now = unix_now();
    let record = s.rp.register(&req.user_id, &req.attestation, now).map_err(|e| ApiError::from_reason(&reason(&e)))?;
    s.persist_authenticators().map_err(internal)?;
    s.record(NewEvent::new("auth.registered", &s.actor(&req.user_id), now));
    Ok(Json(Registered { credential_id: record.credential_id, registered_at: record.registered_at }))
}

async fn assert_begin(State(s): Shared, Json(req): Json<AssertBegin>) -> ApiResult<ChallengeIssued> {
    let c = s.rp.begin_auth(&req.user_id, &req.operation, unix_now()).map_err(|e| ApiError::from_reason(&reason(&e)))?;
    Ok(Json(ChallengeIssued { challenge: c.value, expires_at: c.issued_at + c.ttl_seconds }))
}

fn check_origin(s: &AppState, envelope: &SignedEnvelope) -> Result<(), ApiError> {
    if envelope.client_context.origin != s.config.origin {
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "OriginMismatch", "envelope origin is not this server"));
    }
    Ok(())
}

async fn assert_finish(State(s): Shared, Json(req): Json<AssertFinish>) -> ApiResult<Asserted> {
    let now = unix_now();
    let accepted = s.rp.finish_auth(&req.envelope, now).map_err(|e| ApiError::from_reason(&reason(&e)))?;
    s.persist_authenticators().map_err(internal)?;
    check_origin(&s, &req.envelope)?;
    let mut out = Asserted { user_id: accepted.user_id.clone(), operation: accepted.operation.clone(), hello: None, session_expires_at: None };
    if accepted.operation == SESSION_OPERATION {
        let (key, hello) = session::respond(&req.envelope.challenge, &accepted.payload, &mut OsRng)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, variant(&e), e.to_string()))?;
        let expires_at = now + s.config.session.session_ttl;
        s.sessions
            .lock()
            .unwrap()
            .insert(key.session_id, LiveSession { key, user_id: accepted.user_id.clone(), expires_at });
        out.hello = Some(hello);
        out.session_expires_at = Some(expires_at);
    }
    Ok(Json(out))
}

fn owned_onboarding<'a>(
    map: &'a mut std::collections::HashMap<String, PendingOnboarding>,
    id: &str,
    user: &str,
) -> Result<&'a mut PendingOnboarding, ApiError> {
    let p = map.get_mut(id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownOnboarding", "no such onboarding session"))?;
    if p.owner != user {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "NotOwner", "onboarding session belongs to another user"));
    }
    Ok(p)
}

async fn onboarding_start(State(s): Shared, headers: HeaderMap) -> ApiResult<OnboardingStarted> {
    let (_, user) = session(&s, &headers)?;
    let subject: Did = user.parse().map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "SubjectInvalid", format!("{e}")))?;
    let mut id = [0u8; 16];
    OsRng.fill_bytes(&mut id);
    let id = hex::encode(id);
    let expires_at = unix_now() + s.config.session.session_ttl;
    s.onboarding
        .lock()
        .unwrap()
        .insert(id.clone(), PendingOnboarding { owner: user, session: IdentitySession::new(subject), expires_at });
    Ok(Json(OnboardingStarted { onboarding_id: id }))
}

async fn onboarding_mrz(State(s): Shared, headers: HeaderMap, Json(req): Json<MrzSubmit>) -> ApiResult<Accepted> {
    let (_, user) = session(&s, &headers)?;
    let mut map = s.onboarding.lock().unwrap();
    let p = owned_onboarding(&mut map, &req.onboarding_id, &user)?;
    p.session.submit_mrz(&req.line1, &req.line2).map_err(|e| match e {
        dipa_core::onboarding::OnboardingError::Mrz(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, variant(&m), format!("{m:?}")),
        other => ApiError::from_reason(&reason(&other)),
    })?;
    Ok(Json(Accepted { ok: true }))
}

async fn onboarding_photos(State(s): Shared, headers: HeaderMap, Json(req): Json<PhotosSubmit>) -> ApiResult<Accepted> {
    let (_, user) = session(&s, &headers)?;
    let mut map = s.onboarding.lock().unwrap();
    owned_onboarding(&mut map, &req.onboarding_id, &user)?.session.submit_photos(req.document_photo, req.selfie);
    Ok(Json(Accepted { ok: true }))
}

async fn onboarding_consent(State(s): Shared, headers: HeaderMap, Json(req): Json<ConsentSubmit>) -> ApiResult<Accepted> {
    let (_, user) = session(&s, &headers)?;
    let mut map = s.onboarding.lock().unwrap();
    let p = owned_onboarding(&mut map, &req.onboarding_id, &user)?;
    let consent = verify_consent(&s.rp, &req.envelope, &p.session.subject.clone(), IDENTITY_VETTING_SCOPE, unix_now())
        .map_err(|e| ApiError::from_reason(&reason(&e)))?;
    check_origin(&s, &req.envelope)?;
    p.session.submit_consent(consent);
    drop(map);
    s.persist_authenticators().map_err(internal)?;
    Ok(Json(Accepted { ok: true }))
}

async fn onboarding_finish(State(s): Shared, headers: HeaderMap, Json(req): Json<OnboardingRef>) -> ApiResult<Sealed> {
    let (key, user) = session(&s, &headers)?;
    owned_onboarding(&mut s.onboarding.lock().unwrap(), &req.onboarding_id, &user)?;
    let input = serde_json::json!({ "onboarding_id": req.onboarding_id, "subject": user });
    let (state, outbox) = run_workflow(&s, ONBOARDING, input).await?;
    match (state, outbox) {
        (InstanceState::Completed, Some(Outbox::Identity(issued))) => {
            Ok(sealed(&key, "/onboarding/finish", &*issued))
        }
        (_, Some(Outbox::Rejected(vetting))) => {
            s.onboarding.lock().unwrap().remove(&req.onboarding_id);
            let reasons: Vec<String> = vetting.reasons.iter().map(|r| format!("{r:?}")).collect();
            s.record(
                NewEvent::new("onboarding.rejected", &s.actor(&user), unix_now()).attr("reasons", reasons.join(",")),
            );
            let mut err = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "VettingRejected", "identity vetting failed");
            err.body.reasons = reasons;
            Err(err)
        }
        (InstanceState::Failed { reason, .. }, _) => Err(ApiError::from_reason(&reason)),
        (other, _) => Err(internal(format!("onboarding ended in {other:?}"))),
    }
}

#[derive(Debug, Deserialize)]
struct AuthorizeQuery {
    client_id: String,
    scope: String,
    #[serde(default)]
    consent: Option<String>,
}

fn basic_credentials(headers: &HeaderMap) -> Option<(String, String)> {
    let encoded = headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Basic ")?;
    let decoded = base64::engine::general_purpose::STANDARD.decode(encoded.trim()).ok()?;
    let text = String::from_utf8(decoded).ok()?;
    let (user, pass) = text.split_once(':')?;
    Some((user.to_string(), pass.to_string()))
}

fn words(text: &str) -> BTreeSet<String> {
    text.split_whitespace().map(str::to_string).collect()
}

async fn fhir_authorize(State(s): Shared, headers: HeaderMap, Query(q): Query<AuthorizeQuery>) -> Result<Response, ApiError> {
    let (username, password) = basic_credentials(&headers)
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "LoginFailed", "portal login required"))?;
    let req = AuthorizeRequest {
        client_id: &q.client_id,
        scope: words(&q.scope),
        username: &username,
        password: &password,
        consent: q.consent.as_deref().map(words),
    };
    let grant = s.hub.authorize(&req, unix_now()).map_err(|e| fhir_error(&e))?;
    Ok(Json(grant).into_response())
}

async fn fhir_token(State(s): Shared, Json(req): Json<TokenRequest>) -> Result<Response, ApiError> {
    let now = unix_now();
    let token = match req.grant_type.as_str() {
        "authorization_code" => {
            let code = req.code.as_deref().ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", "code required"))?;
            s.hub.exchange(code, &req.client_id, now)
        }
        "refresh_token" => {
            let rt = req.refresh_token.as_deref().ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", "refresh_token required"))?;
            s.hub.refresh(rt, &req.client_id, now)
        }
        other => return Err(ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", format!("unsupported grant_type {other:?}"))),
    }
    .map_err(|e| fhir_error(&e))?;
    Ok(Json(token).into_response())
}

async fn fhir_patient(State(s): Shared, headers: HeaderMap, Path(id): Path<String>) -> Result<Response, ApiError> {
    let token = bearer(&headers).ok_or_else(|| fhir_error(&FhirError::TokenInvalid))?;
    let patient = s.hub.patient(token, &id, unix_now()).map_err(|e| fhir_error(&e))?;
    Ok(Json(patient).into_response())
}

#[derive(Debug, Deserialize)]
struct ObservationQuery {
    #[serde(default)]
    patient: Option<String>,
    #[serde(default)]
    since: Option<i64>,
}

async fn fhir_observation(State(s): Shared, headers: HeaderMap, Query(q): Query<ObservationQuery>) -> ApiResult<ObservationBundle> {
    let token = bearer(&headers).ok_or_else(|| fhir_error(&FhirError::TokenInvalid))?;
    let entries = s.hub.fetch_observations(token, q.patient.as_deref(), q.since, unix_now()).map_err(|e| fhir_error(&e))?;
    Ok(Json(ObservationBundle { entries }))
}

async fn fhir_link(State(s): Shared, headers: HeaderMap, Json(req): Json<LinkRequest>) -> ApiResult<Sealed> {
    let (key, user) = session(&s, &headers)?;
    let now = unix_now();
    let token = s.hub.exchange(&req.code, &req.client_id, now).map_err(|e| fhir_error(&e))?;
    s.record(NewEvent::new("ehr.linked", &s.actor(&user), now).attr("scope", token.scope.iter().cloned().collect::<Vec<_>>().join(" ")));
    Ok(sealed(&key, "/fhir/link", &Linked { token }))
}

async fn results_fetch(State(s): Shared, headers: HeaderMap, Json(req): Json<ResultsFetch>) -> ApiResult<Sealed> {
    let (key, user) = session(&s, &headers)?;
    let input = serde_json::json!({ "access_token": req.access_token, "since": req.since, "subject": user });
    match run_workflow(&s, RESULTS, input).await? {
        (InstanceState::Completed, Some(Outbox::Observations(out))) => Ok(sealed(&key, "/results/fetch", &out)),
        (InstanceState::Failed { reason, .. }, _) => Err(ApiError::from_reason(&reason)),
        (other, _) => Err(internal(format!("results workflow ended in {other:?}"))),
    }
}

async fn credentials_issue(State(s): Shared, headers: HeaderMap, Json(req): Json<IssueRequest>) -> ApiResult<Sealed> {
    let (key, user) = session(&s, &headers)?;
    let input = serde_json::json!({
        "access_token": req.access_token,
        "observation_ids": req.observation_ids,
        "subject": user,
    });
    match run_workflow(&s, ISSUANCE, input).await? {
        (InstanceState::Completed, Some(Outbox::Issued(out))) => Ok(sealed(&key, "/credentials/issue", &out)),
        (InstanceState::Failed { reason, .. }, _) => Err(ApiError::from_reason(&reason)),
        (other, _) => Err(internal(format!("issuance workflow ended in {other:?}"))),
    }
}

async fn present_mint(State(s): Shared, headers: HeaderMap, Json(req): Json<MintRequest>) -> ApiResult<Minted> {
    let (_, user) = session(&s, &headers)?;
    let now = unix_now();
    let pres = &req.presentation;
    if pres.credential.subject.to_string() != user {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "NotOwner", "credential subject is not the session holder"));
    }
    if !s.registry.is_trusted(&pres.credential.issuer) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "IssuerMismatch", "credential issuer is not trusted"));
    }
    let disclosure = verify_presentation(pres, pres.credential.issuer.public_key_bytes(), &pres.nonce, now, s.registry.policy())
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, variant(&e), format!("{e:?}")))?;

    let proof_ref = match req.ledger_seq {
        None => None,
        Some(seq) => {
            let entry = s.ledger.entry(seq).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownSeq", format!("no ledger entry {seq}")))?;
            if entry.digest != pres.credential.digest() {
                return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "LedgerMismatch", "entry does not anchor this credential"));
            }
            let proof = match s.ledger.proof(seq).map_err(internal)? {
                Some(p) => p,
                None => {
                    s.ledger.seal_batch().map_err(internal)?;
                    s.ledger.proof(seq).map_err(internal)?.ok_or_else(|| internal("batch did not seal"))?
                }
            };
            Some(LedgerRef::from_proof(seq, &proof))
        }
    };
    let anchored = proof_ref.is_some();
    let payload = mint_qr(pres, req.mode, proof_ref, &s.registry, now).map_err(|e| match e {
        PresentationError::PayloadTooLarge { .. } => ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "PayloadTooLarge", e.to_string()),
        other => internal(other),
    })?;
    let (decoded, _, _) = decode_qr(&payload).map_err(internal)?;
    s.record(
        NewEvent::new("presentation.minted", &s.actor(&user), now)
            .attr("credential_type", format!("{:?}", disclosure.credential_type))
            .attr("mode", format!("{:?}", disclosure.mode))
            .attr("qr_mode", format!("{:?}", req.mode)),
    );
    Ok(Json(Minted { size: payload.len(), payload, kid: decoded.kid, exp: decoded.exp, anchored }))
}

async fn present_verify(State(s): Shared, Json(req): Json<VerifyRequest>) -> ApiResult<Verified> {
    let now = req.at.unwrap_or_else(unix_now);
    let server_heads;
    let heads = if req.offline {
        None
    } else if let Some(h) = &req.heads {
        Some(h.as_slice())
    } else {
        server_heads = s.ledger.heads();
        Some(server_heads.as_slice())
    };
    let status = verify_qr(&req.payload, &s.registry, heads, now);
    let policy = req
        .verifier
        .as_deref()
        .filter(|_| status.is_accept())
        .map(|v| s.policy.evaluate(&PolicyContext::from_status(v, &status, now)));
    let mut event = NewEvent::new("presentation.verified", &format!("verifier:{}", req.verifier.as_deref().unwrap_or("anonymous")), unix_now())
        .attr("outcome", format!("{:?}", status.outcome));
    if let Some(r) = &status.reason {
        event = event.attr("reason", variant(r));
    }
    if let Some(l) = status.ledger_check {
        event = event.attr("ledger_check", format!("{l:?}"));
    }
    s.record(event);
    Ok(Json(Verified { status, policy }))
}

async fn push_register(State(s): Shared, headers: HeaderMap, Json(req): Json<PushRegister>) -> ApiResult<Accepted> {
    let (_, user) = session(&s, &headers)?;
    s.registry.register_push(&user, &req.token);
    Ok(Json(Accepted { ok: true }))
}

#[derive(Debug, Deserialize)]
struct PushQueueQuery {
    token: String,
}

async fn push_queue(State(s): Shared, Query(q): Query<PushQueueQuery>) -> Response {
    Json(s.registry.queue(&q.token)).into_response()
}

async fn ledger_heads(State(s): Shared) -> Json<Heads> {
    Json(Heads { heads: s.ledger.heads() })
}

async fn ledger_proof(State(s): Shared, Path(seq): Path<u64>) -> Result<Response, ApiError> {
    match s.ledger.proof(seq) {
        Ok(Some(p)) => Ok(Json(p).into_response()),
        Ok(None) => Ok((StatusCode::ACCEPTED, Json(ErrorBody { error: "Pending".into(), detail: "batch not sealed yet".into(), reasons: vec![] })).into_response()),
        Err(e @ LedgerError::UnknownSeq(_)) => Err(ApiError::new(StatusCode::NOT_FOUND, "UnknownSeq", e.to_string())),
        Err(e) => Err(internal(e)),
    }
}

async fn audit_search(State(s): Shared, Query(q): Query<AuditSearchQuery>) -> Response {
    Json(s.audit.search(&AuditQuery { text: q.q, from: q.from, to: q.to, limit: q.limit })).into_response()
}

async fn audit_report(State(s): Shared, Query(q): Query<AuditReportQuery>) -> Response {
    Json(s.audit.report(q.from, q.to)).into_response()
}

async fn metrics(State(s): Shared, Path(workflow): Path<String>) -> Response {
    Json(s.engine.metrics(&workflow)).into_response()
}

async fn policy_eval(State(s): Shared, Json(ctx): Json<PolicyContext>) -> Response {
    Json(s.policy.evaluate(&ctx)).into_response()
}

pub fn session_bearer(session_id: &[u8; 16]) -> String {
    format!("Bearer {}", b64_encode(session_id))
}

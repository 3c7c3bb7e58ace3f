//! Workflow definitions run by the server and the operations they bind.

use std::fmt::Debug;
use std::sync::{Arc, Weak};

use dipa_core::fhir::{anonymize, rationalize, CanonicalObservation};
use dipa_core::onboarding::VettingResult;
use dipa_core::vc::{issue_credential, HeldCredential};
use dipa_core::{unix_now, Did};
use serde_json::Value;

use crate::audit::NewEvent;
use crate::state::AppState;
use crate::wire::{CredentialsIssued, IdentityIssued, IssuedCredential, ResultsFetched};
use crate::workflow::{Engine, RetryPolicy, StageContext, StageDefinition, StageError, WorkflowDefinition};

pub const ONBOARDING: &str = "onboarding";
pub const RESULTS: &str = "results";
pub const ISSUANCE: &str = "issuance";

/// Output a finished instance leaves for the request handler.
#[derive(Debug)]
pub enum Outbox {
    Identity(Box<IdentityIssued>),
    Rejected(VettingResult),
    Observations(ResultsFetched),
    Issued(CredentialsIssued),
}

/// Name of an enum variant from its `Debug` form.
pub fn variant(e: &impl Debug) -> String {
    let text = format!("{e:?}");
    text.split(['(', '{', ' ']).next().unwrap_or_default().to_string()
}

/// `"<Variant>: <message>"`; handlers map the variant to a status code.
pub fn reason<E: Debug + std::fmt::Display>(e: &E) -> String {
    format!("{}: {e}", variant(e))
}

pub fn code_of(reason: &str) -> &str {
    reason.split(':').next().unwrap_or(reason)
}

fn retry(max_attempts: u32, backoff_ms: u64) -> RetryPolicy {
    RetryPolicy { max_attempts, backoff_ms, ..RetryPolicy::default() }
}

pub fn definitions() -> Vec<WorkflowDefinition> {
    vec![
        WorkflowDefinition::new(
            ONBOARDING,
            vec![
                StageDefinition::new("vet", "onboarding.vet").retry(retry(3, 50)).timeout_ms(10_000),
                StageDefinition::new("mint", "onboarding.mint").retry(RetryPolicy::once()).timeout_ms(10_000),
                StageDefinition::new("audit", "onboarding.audit").retry(retry(2, 10)),
            ],
        ),
        WorkflowDefinition::new(
            RESULTS,
            vec![
                StageDefinition::new("fetch", "fhir.fetch").retry(retry(3, 50)),
                StageDefinition::new("rationalize", "fhir.rationalize").retry(RetryPolicy::once()),
                StageDefinition::new("export", "fhir.export").retry(retry(3, 20)),
            ],
        ),
        WorkflowDefinition::new(
            ISSUANCE,
            vec![
                StageDefinition::new("fetch", "fhir.fetch").retry(retry(3, 50)),
                StageDefinition::new("rationalize", "fhir.rationalize").retry(RetryPolicy::once()),
                StageDefinition::new("issue", "credential.issue").retry(RetryPolicy::once()),
                StageDefinition::new("anchor", "ledger.anchor").retry(RetryPolicy::once()),
            ],
        ),
    ]
}

type OpFn = fn(&AppState, &mut StageContext) -> Result<(), StageError>;

pub fn install(engine: &Engine, state: Weak<AppState>) {
    let ops: [(&str, OpFn); 8] = [
        ("onboarding.vet", vet),
        ("onboarding.mint", mint),
        ("onboarding.audit", audit_onboarding),
        ("fhir.fetch", fetch),
        ("fhir.rationalize", rationalize_all),
        ("fhir.export", export),
        ("credential.issue", issue),
        ("ledger.anchor", anchor),
    ];
    for (name, f) in ops {
        let weak = state.clone();
        engine.register_operation(name, move |ctx| {
            let state: Arc<AppState> = weak.upgrade().ok_or_else(|| StageError::fatal("ServerStopping"))?;
            f(&state, ctx)
        });
    }
    for def in definitions() {
        engine.register_definition(def).expect("built-in workflow definitions are valid");
    }
}

fn input_str<'a>(ctx: &'a StageContext, key: &str) -> Result<&'a str, StageError> {
    ctx.input.get(key).and_then(Value::as_str).ok_or_else(|| StageError::fatal(format!("MissingInput: {key}")))
}

fn subject(ctx: &StageContext) -> Result<Did, StageError> {
    input_str(ctx, "subject")?.parse().map_err(|e| StageError::fatal(reason(&e)))
}

fn scratch<T: serde::de::DeserializeOwned>(ctx: &StageContext, key: &str) -> Result<T, StageError> {
    let v = ctx.scratch.get(key).cloned().ok_or_else(|| StageError::fatal(format!("MissingInput: {key}")))?;
    serde_json::from_value(v).map_err(|e| StageError::fatal(format!("Internal: {e}")))
}

fn to_value(v: &impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("wire types serialize")
}

fn vet(s: &AppState, ctx: &mut StageContext) -> Result<(), StageError> {
    let id = input_str(ctx, "onboarding_id")?;
    let mut map = s.onboarding.lock().unwrap();
    let pending = map.get_mut(id).ok_or_else(|| StageError::fatal("UnknownOnboarding: no such onboarding session"))?;
    match pending.session.vet(s.face.as_ref(), s.authority.as_ref(), s.config.onboarding.face_threshold) {
        Ok(result) if result.is_verified() => Ok(()),
        Ok(result) => {
            s.outbox.lock().unwrap().insert(ctx.instance_id, Outbox::Rejected(result.clone()));
            Err(StageError::fatal("VettingRejected: identity vetting failed"))
        }
        Err(e) => Err(StageError { reason: reason(&e), retryable: e.is_retryable() }),
    }
}

fn mint(s: &AppState, ctx: &mut StageContext) -> Result<(), StageError> {
    let id = input_str(ctx, "onboarding_id")?.to_string();
    let pending = {
        let mut map = s.onboarding.lock().unwrap();
        let p = map.get(&id).ok_or_else(|| StageError::fatal("UnknownOnboarding: no such onboarding session"))?;
        if p.session.consent().is_none() {
            return Err(StageError::fatal("ConsentMissing: consent attestation missing"));
        }
        map.remove(&id).expect("entry checked above")
    };
    let subject = pending.session.subject.clone();
    let vetting = pending.session.vetting().cloned().ok_or_else(|| StageError::fatal("VettingIncomplete"))?;
    let minted = pending
        .session
        .finish(&s.issuer_key, &s.ledger, s.config.onboarding.identity_ttl, unix_now())
        .map_err(|e| StageError::fatal(reason(&e)))?;
    s.registry.register_holder(&subject);
    ctx.scratch.insert("seq".into(), Value::from(minted.receipt.seq));
    let issued = IdentityIssued { credential: minted.credential, receipt: minted.receipt, vetting };
    s.outbox.lock().unwrap().insert(ctx.instance_id, Outbox::Identity(Box::new(issued)));
    Ok(())
}

fn audit_onboarding(s: &AppState, ctx: &mut StageContext) -> Result<(), StageError> {
    let seq: u64 = scratch(ctx, "seq")?;
    let actor = s.actor(input_str(ctx, "subject")?);
    let event = NewEvent::new("onboarding.completed", &actor, unix_now()).attr("credential_type", "Identity").ledger_ref(seq);
    s.audit.record(event).map_err(|e| StageError::retryable(reason(&e)))?;
    Ok(())
}

fn fetch(s: &AppState, ctx: &mut StageContext) -> Result<(), StageError> {
    let token = input_str(ctx, "access_token")?;
    let since = ctx.input.get("since").and_then(Value::as_i64);
    let now = unix_now();
    let raw = s.hub.fetch_observations(token, None, since, now).map_err(|e| StageError::fatal(reason(&e)))?;
    let patient = s.hub.introspect(token, now).map_err(|e| StageError::fatal(reason(&e)))?;
    ctx.scratch.insert("raw".into(), Value::Array(raw));
    ctx.scratch.insert("patient".into(), Value::String(patient));
    Ok(())
}

fn rationalize_all(_: &AppState, ctx: &mut StageContext) -> Result<(), StageError> {
    let raw: Vec<Value> = scratch(ctx, "raw")?;
    let mut observations: Vec<CanonicalObservation> = Vec::new();
    let mut rejected = 0usize;
    for record in &raw {
        match rationalize(record) {
            Ok(obs) if !observations.iter().any(|o| o.id == obs.id) => observations.push(obs),
            Ok(_) => {}
            Err(_) => rejected += 1,
        }
    }
    ctx.scratch.insert("observations".into(), to_value(&observations));
    ctx.scratch.insert("rejected".into(), Value::from(rejected));
    Ok(())
}

fn export(s: &AppState, ctx: &mut StageContext) -> Result<(), StageError> {
    let observations: Vec<CanonicalObservation> = scratch(ctx, "observations")?;
    let rejected: usize = scratch(ctx, "rejected")?;
    let patient: String = scratch(ctx, "patient")?;
    let now = unix_now();
    let org = &s.config.credentials.export_org;
    let key = s.keyring.key(org, now);
    // A retry re-appends; records are per-fetch samples, not a set.
    for obs in &observations {
        s.export.append(org, &anonymize(obs, &patient, &key)).map_err(|e| StageError::retryable(reason(&e)))?;
    }
    let actor = s.actor(input_str(ctx, "subject")?);
    s.record(
        NewEvent::new("results.fetched", &actor, now).attr("count", observations.len()).attr("rejected", rejected),
    );
    s.outbox
        .lock()
        .unwrap()
        .insert(ctx.instance_id, Outbox::Observations(ResultsFetched { observations, rejected }));
    Ok(())
}

fn issue(s: &AppState, ctx: &mut StageContext) -> Result<(), StageError> {
    let observations: Vec<CanonicalObservation> = scratch(ctx, "observations")?;
    let wanted: Vec<String> = serde_json::from_value(ctx.input.get("observation_ids").cloned().unwrap_or_default())
        .map_err(|e| StageError::fatal(format!("MissingInput: observation_ids: {e}")))?;
    let subject = subject(ctx)?;
    let now = unix_now();
    let mut issued: Vec<(String, HeldCredential)> = Vec::new();
    let mut missing = Vec::new();
    for id in wanted {
        match observations.iter().find(|o| o.id == id) {
            Some(obs) => {
                let held = issue_credential(
                    &obs.claims(),
                    obs.credential_type(),
                    &s.issuer_key,
                    &subject,
                    s.config.credentials.result_ttl,
                    now,
                )
                .map_err(|e| StageError::fatal(reason(&e)))?;
                issued.push((id, held));
            }
            None => missing.push(id),
        }
    }
    ctx.scratch.insert("issued".into(), to_value(&issued));
    ctx.scratch.insert("missing".into(), to_value(&missing));
    Ok(())
}

fn anchor(s: &AppState, ctx: &mut StageContext) -> Result<(), StageError> {
    let issued: Vec<(String, HeldCredential)> = scratch(ctx, "issued")?;
    let missing: Vec<String> = scratch(ctx, "missing")?;
    let user = input_str(ctx, "subject")?;
    let actor = s.actor(user);
    let now = unix_now();
    let mut credentials = Vec::with_capacity(issued.len());
    for (observation_id, credential) in issued {
        let receipt = s.ledger.append(&credential.credential.digest()).map_err(|e| StageError::fatal(reason(&e)))?;
        s.record(
            NewEvent::new("credential.issued", &actor, now)
                .attr("credential_type", format!("{:?}", credential.credential.credential_type))
                .ledger_ref(receipt.seq),
        );
        let _ = s.registry.notify(user, "credential.issued", now);
        credentials.push(IssuedCredential { observation_id, credential, receipt });
    }
    s.outbox.lock().unwrap().insert(ctx.instance_id, Outbox::Issued(CredentialsIssued { credentials, missing }));
    Ok(())
}

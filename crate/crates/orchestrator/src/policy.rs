//! Verifier access policy.
//!
//! A policy file is an ordered list of rules, one per line:
//!
//! ```text
//! # comment
//! allow verifier=airline credential=TestResult kind=pcr result=negative max_age=72h
//! deny  result=positive
//! allow verifier=* credential=Vaccination
//! identity_claims full_name date_of_birth document_number nationality document_expiry age
//! ```
//!
//! Match keys are `verifier`, `credential`, `kind` and `result`; a key
//! that is absent or set to `*` matches anything. Values compare
//! case-insensitively, and a trailing `test` on kinds is ignored, so
//! `PcrTest` and `pcr` are the same. `max_age` takes a number with an
//! `s`, `m`, `h` or `d` suffix; an `allow` rule whose other fields match
//! but whose result is older denies with `StaleResult`. The first matching
//! rule decides; nothing matching denies with `DefaultDeny`. The optional
//! `identity_claims` line overrides which claim names are identity claims.

use std::collections::{BTreeMap, BTreeSet};

use dipa_core::presentation::VerifiedStatus;
use dipa_core::vc::{CredentialType, DisclosurePolicy};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("policy line {line}: {message}")]
pub struct PolicyParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Effect {
    Allow,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenyReason {
    DefaultDeny,
    StaleResult,
    RuleDenied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub effect: Effect,
    pub matches: BTreeMap<String, String>,
    pub max_age: Option<i64>,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyContext {
    pub verifier: String,
    pub credential_type: Option<CredentialType>,
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub result: Option<String>,
    /// Seconds between the result's effective time and evaluation.
    #[serde(default)]
    pub age_seconds: Option<i64>,
}

impl PolicyContext {
    /// Builds a context from an accepted verification.
    pub fn from_status(verifier: &str, status: &VerifiedStatus, now: i64) -> Self {
        let claims = status.claims();
        Self {
            verifier: verifier.into(),
            credential_type: status.credential_type,
            kind: claims.get("kind").cloned(),
            result: claims.get("status").cloned(),
            age_seconds: claims.get("effective_at").and_then(|t| t.parse::<i64>().ok()).map(|t| now - t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
pub enum Decision {
    Allow { line: usize },
    Deny { reason: DenyReason, line: Option<usize> },
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Policy {
    pub rules: Vec<Rule>,
    pub identity_claims: Option<BTreeSet<String>>,
}

const MATCH_KEYS: [&str; 4] = ["verifier", "credential", "kind", "result"];

fn normalize(key: &str, value: &str) -> String {
    let v = value.trim().to_lowercase();
    if key == "kind" {
        v.strip_suffix("test").filter(|s| !s.is_empty()).map(str::to_string).unwrap_or(v)
    } else {
        v
    }
}

pub fn parse_duration(text: &str) -> Option<i64> {
    let (num, unit) = text.split_at(text.find(|c: char| !c.is_ascii_digit())?);
    let n: i64 = num.parse().ok()?;
    let mult = match unit {
        "s" => 1,
        "m" => 60,
        "h" => 3600,
        "d" => 86_400,
        _ => return None,
    };
    n.checked_mul(mult)
}

impl Policy {
    pub fn parse(text: &str) -> Result<Self, PolicyParseError> {
        let mut policy = Policy::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| PolicyParseError { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            let mut words = content.split_whitespace();
            let Some(head) = words.next() else { continue };
            let effect = match head {
                "allow" => Effect::Allow,
                "deny" => Effect::Deny,
                "identity_claims" => {
                    policy.identity_claims = Some(words.map(str::to_string).collect());
                    continue;
                }
                other => return Err(err(format!("unknown directive {other:?}"))),
            };
            let mut rule = Rule { effect, matches: BTreeMap::new(), max_age: None, line };
            for word in words {
                let (k, v) = word.split_once('=').ok_or_else(|| err(format!("expected key=value, got {word:?}")))?;
                if k == "max_age" {
                    rule.max_age = Some(parse_duration(v).ok_or_else(|| err(format!("bad duration {v:?}")))?);
                } else if MATCH_KEYS.contains(&k) {
                    if v != "*" {
                        rule.matches.insert(k.to_string(), normalize(k, v));
                    }
                } else {
                    return Err(err(format!("unknown key {k:?}")));
                }
            }
            policy.rules.push(rule);
        }
        Ok(policy)
    }

    pub fn disclosure_policy(&self) -> DisclosurePolicy {
        match &self.identity_claims {
            Some(c) => DisclosurePolicy { identity_claims: c.clone() },
            None => DisclosurePolicy::default(),
        }
    }

    pub fn evaluate(&self, ctx: &PolicyContext) -> Decision {
        let credential = ctx.credential_type.map(|c| format!("{c:?}"));
        let field = |key: &str| -> Option<String> {
            match key {
                "verifier" => Some(ctx.verifier.clone()),
                "credential" => credential.clone(),
                "kind" => ctx.kind.clone(),
                "result" => ctx.result.clone(),
                _ => None,
            }
            .map(|v| normalize(key, &v))
        };
        for rule in &self.rules {
            if !rule.matches.iter().all(|(k, v)| field(k).as_deref() == Some(v.as_str())) {
                continue;
            }
            return match rule.effect {
                Effect::Deny => Decision::Deny { reason: DenyReason::RuleDenied, line: Some(rule.line) },
                Effect::Allow => match (rule.max_age, ctx.age_seconds) {
                    (Some(max), Some(age)) if age <= max => Decision::Allow { line: rule.line },
                    (Some(_), _) => Decision::Deny { reason: DenyReason::StaleResult, line: Some(rule.line) },
                    (None, _) => Decision::Allow { line: rule.line },
                },
            };
        }
        Decision::Deny { reason: DenyReason::DefaultDeny, line: None }
    }
}

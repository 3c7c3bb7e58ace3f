//! Rationalization of the two seeded EHR dialects into [`CanonicalObservation`].
//!
//! * `bundle`: FHIR-style `Observation` / `Immunization` resources, optionally
//!   wrapped in a single-entry `Bundle`, coded with LOINC, SNOMED CT and CVX.
//! * `lab-export`: flat records (`"format": "lab-export/1"`) with short
//!   mnemonics and space-separated UTC timestamps.

use serde_json::Value;
use time::format_description::well_known::Rfc3339;
use time::macros::format_description;
use time::{Date, OffsetDateTime, PrimitiveDateTime};

use super::terminology::{self, CVX, LOINC, SNOMED};
use super::{observation_id, CanonicalObservation, FhirError, ObservationKind, ObservationResult};

pub const BUNDLE_DIALECT: &str = "bundle";
pub const LAB_EXPORT_DIALECT: &str = "lab-export";
pub const LAB_EXPORT_FORMAT: &str = "lab-export/1";

/// Names the dialect of `raw`, if any registered one matches.
pub fn detect(raw: &Value) -> Option<&'static str> {
    let obj = raw.as_object()?;
    if obj.contains_key("resourceType") {
        return Some(BUNDLE_DIALECT);
    }
    if obj.get("format").and_then(Value::as_str) == Some(LAB_EXPORT_FORMAT) {
        return Some(LAB_EXPORT_DIALECT);
    }
    None
}

pub fn rationalize(raw: &Value) -> Result<CanonicalObservation, FhirError> {
    match detect(raw) {
        Some(BUNDLE_DIALECT) => rationalize_resource(unwrap_bundle(raw)?),
        Some(LAB_EXPORT_DIALECT) => rationalize_lab_export(raw),
        _ => Err(FhirError::UnmappableDialect),
    }
}

fn unwrap_bundle(raw: &Value) -> Result<&Value, FhirError> {
    if raw["resourceType"] != "Bundle" {
        return Ok(raw);
    }
    match raw["entry"].as_array().map(Vec::as_slice) {
        Some([entry]) => entry.get("resource").ok_or(FhirError::IncompleteRecord("entry.resource")),
        _ => Err(FhirError::UnmappableDialect),
    }
}

fn rationalize_resource(res: &Value) -> Result<CanonicalObservation, FhirError> {
    let id = str_field(res, "id", "id")?;
    match res["resourceType"].as_str() {
        Some("Observation") => {
            let code = coding(&res["code"], LOINC).ok_or(FhirError::IncompleteRecord("code"))?;
            let kind = terminology::kind_for_loinc(code).ok_or_else(|| FhirError::UnknownCode(code.into()))?;
            let result_code =
                coding(&res["valueCodeableConcept"], SNOMED).ok_or(FhirError::IncompleteRecord("valueCodeableConcept"))?;
            let result = terminology::result_for_snomed(result_code)
                .ok_or_else(|| FhirError::UnknownCode(result_code.into()))?;
            let effective_at = rfc3339(res.get("effectiveDateTime"), "effectiveDateTime")?;
            let performer = reference(&res["performer"][0]["reference"]).ok_or(FhirError::IncompleteRecord("performer"))?;
            CanonicalObservation::new(
                observation_id(BUNDLE_DIALECT, id),
                kind,
                result,
                code.to_string(),
                effective_at,
                performer,
                None,
                None,
            )
        }
        Some("Immunization") => {
            let code = coding(&res["vaccineCode"], CVX).ok_or(FhirError::IncompleteRecord("vaccineCode"))?;
            let product = terminology::product_for_cvx(code).ok_or_else(|| FhirError::UnknownCode(code.into()))?;
            let effective_at = rfc3339(res.get("occurrenceDateTime"), "occurrenceDateTime")?;
            let performer =
                reference(&res["performer"][0]["actor"]["reference"]).ok_or(FhirError::IncompleteRecord("performer"))?;
            let dose = dose_number(&res["protocolApplied"][0]["doseNumberPositiveInt"], "protocolApplied")?;
            CanonicalObservation::new(
                observation_id(BUNDLE_DIALECT, id),
                ObservationKind::Vaccination,
                ObservationResult::Administered,
                code.to_string(),
                effective_at,
                performer,
                Some(product.to_string()),
                Some(dose),
            )
        }
        _ => Err(FhirError::UnmappableDialect),
    }
}

fn rationalize_lab_export(rec: &Value) -> Result<CanonicalObservation, FhirError> {
    let id = str_field(rec, "record_id", "record_id")?;
    let test_type = str_field(rec, "test_type", "test_type")?;
    if test_type.eq_ignore_ascii_case("VACCINE") {
        let product = str_field(rec, "product", "product")?;
        let code = terminology::cvx_for_product(product).ok_or_else(|| FhirError::UnknownCode(product.into()))?;
        let effective_at = flat_time(rec.get("administered"), "administered")?;
        let performer = str_field(rec, "site_id", "site_id")?;
        let dose = dose_number(&rec["dose"], "dose")?;
        return CanonicalObservation::new(
            observation_id(LAB_EXPORT_DIALECT, id),
            ObservationKind::Vaccination,
            ObservationResult::Administered,
            code.to_string(),
            effective_at,
            performer.to_string(),
            Some(terminology::product_for_cvx(code).unwrap_or(product).to_string()),
            Some(dose),
        );
    }
    let kind = match test_type.to_ascii_uppercase().as_str() {
        "PCR" => ObservationKind::PcrTest,
        "ANTIGEN" => ObservationKind::AntigenTest,
        "ANTIBODY" => ObservationKind::AntibodyTest,
        _ => return Err(FhirError::UnknownCode(test_type.into())),
    };
    let result_text = str_field(rec, "result", "result")?;
    let result = match result_text.to_ascii_uppercase().as_str() {
        "NEG" => ObservationResult::Negative,
        "POS" => ObservationResult::Positive,
        "DET" => ObservationResult::Detected,
        "ND" => ObservationResult::NotDetected,
        _ => return Err(FhirError::UnknownCode(result_text.into())),
    };
    let effective_at = flat_time(rec.get("collected"), "collected")?;
    let performer = str_field(rec, "lab_id", "lab_id")?;
    let code = terminology::loinc_for_kind(kind).expect("test kinds have a LOINC code");
    CanonicalObservation::new(
        observation_id(LAB_EXPORT_DIALECT, id),
        kind,
        result,
        code.to_string(),
        effective_at,
        performer.to_string(),
        None,
        None,
    )
}

/// Best-effort effective time used by the hub's `since` filter.
pub(crate) fn effective_time(raw: &Value) -> Option<i64> {
    match detect(raw)? {
        BUNDLE_DIALECT => {
            let res = unwrap_bundle(raw).ok()?;
            let v = res.get("effectiveDateTime").or_else(|| res.get("occurrenceDateTime"));
            rfc3339(v, "").ok()
        }
        _ => flat_time(raw.get("collected").or_else(|| raw.get("administered")), "").ok(),
    }
}

fn str_field<'a>(v: &'a Value, key: &str, field: &'static str) -> Result<&'a str, FhirError> {
    match v.get(key).and_then(Value::as_str) {
        Some(s) if !s.trim().is_empty() => Ok(s),
        _ => Err(FhirError::IncompleteRecord(field)),
    }
}

fn coding<'a>(concept: &'a Value, system: &str) -> Option<&'a str> {
    concept["coding"]
        .as_array()?
        .iter()
        .find(|c| c["system"] == system)
        .and_then(|c| c["code"].as_str())
}

fn reference(v: &Value) -> Option<String> {
    let r = v.as_str()?;
    let id = r.rsplit('/').next().unwrap_or(r);
    (!id.is_empty()).then(|| id.to_string())
}

fn dose_number(v: &Value, field: &'static str) -> Result<u32, FhirError> {
    v.as_u64()
        .filter(|&n| n >= 1)
        .and_then(|n| u32::try_from(n).ok())
        .ok_or(FhirError::IncompleteRecord(field))
}

fn rfc3339(v: Option<&Value>, field: &'static str) -> Result<i64, FhirError> {
    let s = v.and_then(Value::as_str).ok_or(FhirError::IncompleteRecord(field))?;
    OffsetDateTime::parse(s, &Rfc3339)
        .map(OffsetDateTime::unix_timestamp)
        .map_err(|_| FhirError::IncompleteRecord(field))
}

fn flat_time(v: Option<&Value>, field: &'static str) -> Result<i64, FhirError> {
    let s = v.and_then(Value::as_str).ok_or(FhirError::IncompleteRecord(field))?;
    if let Ok(dt) = PrimitiveDateTime::parse(s, format_description!("[year]-[month]-[day] [hour]:[minute]")) {
        return Ok(dt.assume_utc().unix_timestamp());
    }
    Date::parse(s, format_description!("[year]-[month]-[day]"))
        .map(|d| d.midnight().assume_utc().unix_timestamp())
        .map_err(|_| FhirError::IncompleteRecord(field))
}

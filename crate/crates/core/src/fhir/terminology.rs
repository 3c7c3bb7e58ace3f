//! Bundled code tables. Small and fixed; there is no terminology server.

use super::{ObservationKind, ObservationResult};

pub const LOINC: &str = "http://loinc.org";
pub const SNOMED: &str = "http://snomed.info/sct";
pub const CVX: &str = "http://hl7.org/fhir/sid/cvx";

pub const LOINC_PCR: &str = "94500-6";
pub const LOINC_ANTIGEN: &str = "94558-4";
pub const LOINC_ANTIBODY: &str = "94563-4";

const TEST_CODES: [(&str, ObservationKind); 3] = [
    (LOINC_PCR, ObservationKind::PcrTest),
    (LOINC_ANTIGEN, ObservationKind::AntigenTest),
    (LOINC_ANTIBODY, ObservationKind::AntibodyTest),
];

const RESULT_CODES: [(&str, ObservationResult); 4] = [
    ("260385009", ObservationResult::Negative),
    ("10828004", ObservationResult::Positive),
    ("260373001", ObservationResult::Detected),
    ("260415000", ObservationResult::NotDetected),
];

/// CVX code, product name as printed on lab exports.
const VACCINES: [(&str, &str); 4] = [
    ("207", "mRNA-1273"),
    ("208", "BNT162b2"),
    ("210", "ChAdOx1"),
    ("212", "Ad26.COV2.S"),
];

/// Performer identifier to coarse region.
const REGIONS: [(&str, &str); 4] = [
    ("lab-north", "NORTH"),
    ("lab-south", "SOUTH"),
    ("clinic-east", "EAST"),
    ("clinic-west", "WEST"),
];

pub const UNKNOWN_REGION: &str = "UNKNOWN";

pub fn kind_for_loinc(code: &str) -> Option<ObservationKind> {
    TEST_CODES.iter().find(|(c, _)| *c == code).map(|(_, k)| *k)
}

pub fn loinc_for_kind(kind: ObservationKind) -> Option<&'static str> {
    TEST_CODES.iter().find(|(_, k)| *k == kind).map(|(c, _)| *c)
}

pub fn result_for_snomed(code: &str) -> Option<ObservationResult> {
    RESULT_CODES.iter().find(|(c, _)| *c == code).map(|(_, r)| *r)
}

pub fn product_for_cvx(code: &str) -> Option<&'static str> {
    VACCINES.iter().find(|(c, _)| *c == code).map(|(_, p)| *p)
}

pub fn cvx_for_product(product: &str) -> Option<&'static str> {
    VACCINES.iter().find(|(_, p)| p.eq_ignore_ascii_case(product)).map(|(c, _)| *c)
}

pub fn region_for(performer: &str) -> &'static str {
    REGIONS.iter().find(|(p, _)| *p == performer).map(|(_, r)| *r).unwrap_or(UNKNOWN_REGION)
}

//! Seeded EHR corpus, compiled in from `fixtures/ehr/`.

use serde_json::Value;

use super::{FhirHub, SCOPE_OBSERVATION_READ, SCOPE_PATIENT_READ};

macro_rules! fixture {
    ($path:literal) => {
        ($path, include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/ehr/", $path)))
    };
}

/// Records every dialect must map.
pub const VALID: [(&str, &str); 6] = [
    fixture!("bundle/pcr-negative.json"),
    fixture!("bundle/immunization-dose1.json"),
    fixture!("bundle/antibody-detected.json"),
    fixture!("lab-export/antigen-negative.json"),
    fixture!("lab-export/vaccine-dose2.json"),
    fixture!("lab-export/pcr-positive.json"),
];

/// Records that must fail with a typed error.
pub const INVALID: [(&str, &str); 3] = [
    fixture!("invalid/missing-effective-time.json"),
    fixture!("invalid/hl7v2-message.json"),
    fixture!("invalid/unknown-test-code.json"),
];

pub const DEMO_CLIENT_ID: &str = "dipa-wallet";
pub const DEMO_USERNAME: &str = "anna.eriksson";
pub const DEMO_PASSWORD: &str = "portal-pass-4821";
pub const DEMO_NAME: &str = "ANNA MARIA ERIKSSON";
pub const DEMO_BIRTH_DATE: &str = "1974-08-12";

pub const SECOND_USERNAME: &str = "lee.okafor";
pub const SECOND_PASSWORD: &str = "portal-pass-7730";

pub fn parse(text: &str) -> Value {
    serde_json::from_str(text).expect("fixture is valid JSON")
}

pub fn corpus() -> impl Iterator<Item = (&'static str, Value)> {
    VALID.into_iter().chain(INVALID).map(|(name, text)| (name, parse(text)))
}

#[derive(Debug, Clone)]
pub struct SeededPatients {
    pub demo: String,
    pub second: String,
}

/// Registers the demo client and two patients. The demo patient has two
/// tests and one vaccination.
pub fn seed(hub: &FhirHub) -> SeededPatients {
    hub.register_client(DEMO_CLIENT_ID, [SCOPE_OBSERVATION_READ, SCOPE_PATIENT_READ]);
    let demo = hub.register_patient(DEMO_NAME, DEMO_BIRTH_DATE, DEMO_USERNAME, DEMO_PASSWORD);
    for (_, text) in [VALID[0], VALID[3], VALID[4]] {
        hub.add_observation(&demo, parse(text));
    }
    let second = hub.register_patient("LEE OKAFOR", "1990-02-28", SECOND_USERNAME, SECOND_PASSWORD);
    for (_, text) in [VALID[1], VALID[2], VALID[5]] {
        hub.add_observation(&second, parse(text));
    }
    SeededPatients { demo, second }
}

use std::collections::BTreeMap;

use dipa_orchestrator::audit::{day_of, AuditError, AuditEvent, AuditLog, AuditQuery, NewEvent, DENIED_FIELDS};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Input {
    event_type: String,
    actor: String,
    timestamp: i64,
    attributes: Vec<(String, String)>,
}

fn input() -> impl Strategy<Value = Input> {
    let key = prop_oneof![
        4 => "[a-z_]{1,10}".prop_map(String::from),
        1 => prop::sample::select(DENIED_FIELDS).prop_map(String::from),
    ];
    (
        prop::sample::select(vec!["onboarding.completed", "credential.issued", "results.fetched", "auth.failed"]),
        "[0-9a-f]{4}",
        1_700_000_000i64..1_700_500_000,
        prop::collection::vec((key, "[A-Za-z0-9 .-]{0,12}"), 0..4),
    )
        .prop_map(|(t, actor, timestamp, attributes)| Input { event_type: t.into(), actor, timestamp, attributes })
}

fn to_event(i: &Input) -> NewEvent {
    i.attributes.iter().fold(NewEvent::new(&i.event_type, &i.actor, i.timestamp), |e, (k, v)| e.attr(k, v))
}

fn naive_search(events: &[AuditEvent], q: &AuditQuery) -> Vec<u64> {
    let needle = q.text.as_deref().unwrap_or("").to_lowercase();
    events
        .iter()
        .rev()
        .filter(|e| {
            needle.is_empty()
                || e.event_type.to_lowercase().contains(&needle)
                || e.actor.to_lowercase().contains(&needle)
                || e.attributes.values().any(|v| v.to_lowercase().contains(&needle))
        })
        .filter(|e| q.from.is_none_or(|f| e.timestamp >= f) && q.to.is_none_or(|t| e.timestamp < t))
        .take(q.limit.unwrap_or(usize::MAX))
        .map(|e| e.seq)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn append_only_and_pii_free(inputs in prop::collection::vec(input(), 1..60), needle in "[a-z.]{0,4}", window in 0i64..500_000) {
        let dir = tempfile::tempdir().unwrap();
        let log = AuditLog::open(dir.path()).unwrap();
        let mut stored = Vec::new();
        let mut last = 0;
        for i in &inputs {
            let pii = i.attributes.iter().any(|(k, _)| DENIED_FIELDS.contains(&k.as_str()));
            match log.record(to_event(i)) {
                Ok(seq) => {
                    prop_assert!(!pii);
                    prop_assert!(seq > last);
                    last = seq;
                    stored.push(log.get(seq).unwrap());
                }
                Err(AuditError::PiiRejected(field)) => {
                    prop_assert!(pii);
                    prop_assert!(DENIED_FIELDS.contains(&field.as_str()));
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
        prop_assert_eq!(log.len(), stored.len());
        for e in &stored {
            prop_assert!(e.attributes.keys().all(|k| !DENIED_FIELDS.contains(&k.as_str())));
        }

        let q = AuditQuery {
            text: Some(needle),
            from: Some(1_700_000_000 + window / 2),
            to: Some(1_700_000_000 + window),
            limit: None,
        };
        let got: Vec<u64> = log.search(&q).iter().map(|e| e.seq).collect();
        prop_assert_eq!(&got, &naive_search(&stored, &q));

        let mut expected: BTreeMap<(String, String), u64> = BTreeMap::new();
        for e in &stored {
            *expected.entry((day_of(e.timestamp), e.event_type.clone())).or_default() += 1;
        }
        let report: BTreeMap<(String, String), u64> =
            log.report(None, None).into_iter().map(|b| ((b.day, b.event_type), b.count)).collect();
        prop_assert_eq!(report, expected);

        drop(log);
        let reopened = AuditLog::open(dir.path()).unwrap();
        let all = reopened.search(&AuditQuery::default());
        prop_assert_eq!(all.into_iter().rev().collect::<Vec<_>>(), stored.clone());
        let next = reopened.record(NewEvent::new("x", "y", 0)).unwrap();
        prop_assert_eq!(next, last + 1);
        prop_assert_eq!(reopened.search(&q).iter().map(|e| e.seq).collect::<Vec<_>>(), got);
    }
}

#[test]
fn segments_roll_over_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let log = AuditLog::open(dir.path()).unwrap();
    for i in 0..2500 {
        log.record(NewEvent::new("credential.issued", "ab12", 1_700_000_000 + i).attr("kind", "pcr")).unwrap();
    }
    drop(log);
    let mut names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 3);
    let log = AuditLog::open(dir.path()).unwrap();
    assert_eq!(log.len(), 2500);
    assert_eq!(log.search(&AuditQuery { text: Some("PCR".into()), limit: Some(5), ..Default::default() })[0].seq, 2500);
}

#[test]
fn reordered_segment_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let log = AuditLog::open(dir.path()).unwrap();
    for i in 0..3 {
        log.record(NewEvent::new("t", "a", i)).unwrap();
    }
    drop(log);
    let path = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(0, 2);
    std::fs::write(&path, lines.join("\n")).unwrap();
    assert!(matches!(AuditLog::open(dir.path()), Err(AuditError::Corrupt { .. })));
}

use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::bundled::{default_mapping, default_rules, meeting_ontology_plugged};
use crate::kb::ValidationMode;
use crate::reasoner::{resolve_conflict, Conflict, NoLineage};

fn kb() -> KnowledgeBase {
    KnowledgeBase::new(Arc::new(meeting_ontology_plugged()), ValidationMode::Strict)
}

fn acq() -> Acquisition {
    let mut a = Acquisition::new(default_mapping(), ConfidenceTable::default());
    for (id, kind, src) in [
        ("timetable", ProviderKind::Timetable, SourceTag::Sensed),
        ("calendar", ProviderKind::Calendar, SourceTag::Sensed),
        ("email", ProviderKind::Email, SourceTag::Sensed),
        ("weather", ProviderKind::Weather, SourceTag::Sensed),
        ("travel", ProviderKind::Generic, SourceTag::Sensed),
        ("profile", ProviderKind::Profile, SourceTag::Defined),
    ] {
        a.register_provider(ProviderDescriptor::push(id, kind, src)).unwrap();
    }
    a
}

fn t(s: &str) -> Timestamp {
    Timestamp::parse(s).unwrap()
}

fn event(provider: &str, seq: u64, payload: serde_json::Value) -> ProviderEvent {
    ProviderEvent {
        provider_id: provider.into(),
        event_time: t("2025-01-14T08:55:00Z"),
        payload: serde_json::from_value(payload).unwrap(),
        sequence_no: seq,
    }
}

#[test]
fn bundled_mapping_fits_the_ontology() {
    default_mapping().check_against(&meeting_ontology_plugged()).unwrap();
    let round = MappingRuleSet::from_json(&default_mapping().to_json()).unwrap();
    assert_eq!(round, default_mapping());
}

#[test]
fn timetable_event_becomes_a_sensed_fact() {
    let (mut a, mut kb) = (acq(), kb());
    let ids =
        a.ingest(&mut kb, &event("timetable", 1, json!({"user": "John", "slot": "Tue09", "room": "Office", "activity": "Class"}))).unwrap();
    assert_eq!(ids.len(), 1);
    let f = kb.get(ids[0]).unwrap();
    assert_eq!((f.subject.as_str(), f.predicate.as_str(), f.object.to_string()), ("John", "Timetable", "Office".into()));
    assert_eq!((f.source, f.confidence), (SourceTag::Sensed, 0.9));
    assert_eq!(f.provider, "timetable");
    assert_eq!(a.last_seen("timetable"), Some(1));
}

#[test]
fn weather_and_email_events() {
    let (mut a, mut kb) = (acq(), kb());
    let ids = a.ingest(&mut kb, &event("weather", 1, json!({"condition": "Snowing"}))).unwrap();
    let w = kb.get(ids[0]).unwrap();
    assert_eq!((w.subject.as_str(), w.object.to_string(), w.source, w.confidence), ("Weather", "Snowing".into(), SourceTag::Sensed, 0.9));

    let ids = a
        .ingest(
            &mut kb,
            &event(
                "email",
                1,
                json!({"from": "John", "to": "Kim", "meeting_time": "2025-01-14T11:00:00Z", "duration_minutes": 60, "topic": "Meeting"}),
            ),
        )
        .unwrap();
    let m = kb.get(ids[0]).unwrap();
    assert_eq!((m.predicate.as_str(), m.object.to_string()), ("Activity", "Meeting".into()));
    assert_eq!(m.interval().to_string(), "[2025-01-14T11:00:00Z, 2025-01-14T12:00:00Z)");
    assert_eq!(kb.get(ids[1]).unwrap().predicate, "MeetingWith");
}

#[test]
fn stale_and_unknown_events_are_rejected() {
    let (mut a, mut kb) = (acq(), kb());
    let e = event("weather", 5, json!({"condition": "Snowing"}));
    a.ingest(&mut kb, &e).unwrap();
    let before = kb.len();
    assert!(matches!(a.ingest(&mut kb, &e), Err(AcquisitionError::StaleEvent { seq: 5, last: 5, .. })));
    assert!(matches!(a.ingest(&mut kb, &event("weather", 4, json!({"condition": "Clear"}))), Err(AcquisitionError::StaleEvent { .. })));
    assert!(matches!(a.ingest(&mut kb, &event("nobody", 1, json!({}))), Err(AcquisitionError::UnknownProvider(_))));
    assert!(matches!(a.ingest(&mut kb, &event("weather", 6, json!({"wind": 3}))), Err(AcquisitionError::UnmappedPayload { .. })));
    assert_eq!(kb.len(), before);
    assert_eq!(a.last_seen("weather"), Some(5));
}

#[test]
fn failed_events_store_nothing() {
    let (mut a, mut kb) = (acq(), kb());
    // The first emitted fact is valid, the second names an undeclared person.
    let e = event(
        "email",
        1,
        json!({"from": "John", "to": "Nobody", "meeting_time": "2025-01-14T11:00:00Z", "duration_minutes": 60, "topic": "Meeting"}),
    );
    assert!(matches!(a.ingest(&mut kb, &e), Err(AcquisitionError::Kb(KbError::ValidationFailed(_)))));
    assert!(kb.is_empty());
    assert_eq!(a.last_seen("email"), None);
    let bad_time =
        event("email", 2, json!({"from": "John", "to": "Kim", "meeting_time": "Tue 11:00", "duration_minutes": 60, "topic": "Meeting"}));
    assert!(matches!(a.ingest(&mut kb, &bad_time), Err(AcquisitionError::Template { .. })));
    assert!(kb.is_empty());
}

#[test]
fn registration_errors() {
    let mut a = acq();
    assert!(matches!(
        a.register_provider(ProviderDescriptor::push("weather", ProviderKind::Weather, SourceTag::Sensed)),
        Err(AcquisitionError::DuplicateProvider(_))
    ));
    assert!(matches!(
        a.register_provider(ProviderDescriptor::push("w2", ProviderKind::Weather, SourceTag::Sensed).polled_every(0)),
        Err(AcquisitionError::InvalidInterval(_))
    ));
    assert!(matches!(
        a.register_provider(ProviderDescriptor::push("w3", ProviderKind::Weather, SourceTag::Deduced)),
        Err(AcquisitionError::InvalidDescriptor { .. })
    ));
    assert!(matches!(
        a.register_provider(ProviderDescriptor::push("w4", ProviderKind::Weather, SourceTag::Sensed).with_confidence(1.5)),
        Err(AcquisitionError::InvalidDescriptor { .. })
    ));
}

#[test]
fn descriptor_and_template_overrides() {
    let mut a = acq();
    a.register_provider(ProviderDescriptor::push("cheap-weather", ProviderKind::Weather, SourceTag::Aggregated).with_confidence(0.4))
        .unwrap();
    let mut kb = kb();
    let ids = a.ingest(&mut kb, &event("cheap-weather", 1, json!({"temperature": -4}))).unwrap();
    let f = kb.get(ids[0]).unwrap();
    assert_eq!((f.source, f.confidence, f.object.to_string()), (SourceTag::Aggregated, 0.4, "-4".into()));
}

#[test]
fn user_updates_are_defined_and_outrank_sensors() {
    let (mut a, mut kb) = (acq(), kb());
    let at = t("2025-01-14T13:00:00Z");
    let id = a.user_update(&mut kb, "John", "Activity", Value::ident("OutForConference"), at).unwrap();
    let f = kb.get(id).unwrap().clone();
    assert_eq!((f.source, f.confidence, f.provider.as_str()), (SourceTag::Defined, 1.0, "user:John"));
    assert!(matches!(
        a.user_update(&mut kb, "John", "Activity", Value::ident(""), at),
        Err(AcquisitionError::Kb(KbError::ValidationFailed(_)))
    ));

    let mut e = event(
        "email",
        1,
        json!({"from": "John", "to": "Kim", "meeting_time": "2025-01-14T13:00:00Z", "duration_minutes": 60, "topic": "Meeting"}),
    );
    e.event_time = at;
    let ids = a.ingest(&mut kb, &e).unwrap();
    let c = Conflict::new(vec![f.clone(), kb.get(ids[0]).unwrap().clone()]).unwrap();
    let r = resolve_conflict(&c, &default_rules(), &NoLineage).unwrap();
    assert_eq!(r.canonical.fact_id, f.fact_id);
}

#[test]
fn polls_follow_the_simulated_clock() {
    let mut a = acq();
    a.register_provider(ProviderDescriptor::push("w", ProviderKind::Weather, SourceTag::Sensed).polled_every(30)).unwrap();
    let start = t("2025-01-14T08:00:00Z");
    assert_eq!(a.due_polls(start), ["w"]);
    assert!(a.due_polls(start.plus_minutes(29)).is_empty());
    assert_eq!(a.due_polls(start.plus_minutes(30)), ["w"]);
    assert!(a.due_polls(start.plus_minutes(31)).is_empty());
}

#[test]
fn confidence_table_validation() {
    assert!(ConfidenceTable::default().validate().is_ok());
    assert!(ConfidenceTable { sensed: 1.0, ..Default::default() }.validate().is_err());
    assert!(ConfidenceTable { defined: 1.2, ..Default::default() }.validate().is_err());
    assert_eq!(ConfidenceTable::default().get(SourceTag::Scheduled), None);
    let json = serde_json::to_string(&ConfidenceTable::default()).unwrap();
    assert_eq!(json, r#"{"Defined":1.0,"Sensed":0.9,"Planned":0.8,"Aggregated":0.7}"#);
}

fn arb_event() -> impl Strategy<Value = (usize, u64, serde_json::Value)> {
    let payloads = prop_oneof![
        Just(json!({"condition": "Snowing"})),
        Just(json!({"condition": "clear"})),
        Just(json!({"temperature": 3})),
        Just(json!({"user": "John", "room": "Office"})),
        Just(json!({"user": "Kim", "entry": "Personal"})),
        Just(json!({"user": "John", "search": "Flight"})),
        Just(json!({"user": "Ghost", "room": "Office"})),
        Just(json!({"nothing": true})),
        Just(json!({"from": "John", "to": "Kim"})),
    ];
    (0usize..6, 0u64..12, payloads)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ingestion_properties(events in proptest::collection::vec(arb_event(), 0..40)) {
        let ids = ["timetable", "calendar", "email", "weather", "travel", "profile"];
        let run = || {
            let (mut a, mut kb) = (acq(), kb());
            let mut outcomes = Vec::new();
            let mut max_seq = std::collections::BTreeMap::new();
            for (p, seq, payload) in &events {
                let e = event(ids[*p], *seq, payload.clone());
                let before = kb.len();
                let r = a.ingest(&mut kb, &e);
                match &r {
                    // No silent drops: success means at least one new fact.
                    Ok(v) => {
                        assert!(!v.is_empty());
                        assert_eq!(kb.len(), before + v.len());
                        max_seq.insert(ids[*p], *seq);
                    }
                    Err(_) => assert_eq!(kb.len(), before),
                }
                outcomes.push(r.map_err(|e| e.to_string()));
            }
            for id in ids {
                assert_eq!(a.last_seen(id), max_seq.get(id).copied());
            }
            assert!(kb.facts().all(|f| !f.source.is_derived()));
            (outcomes, kb.snapshot())
        };
        // Determinism: identical event sequences give identical facts.
        prop_assert_eq!(run(), run());
    }
}

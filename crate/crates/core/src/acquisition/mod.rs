//! Provider registry and event normalization.
//!
//! Providers are registered with a descriptor, then push [`ProviderEvent`]s
//! (or are polled on the simulated clock). Each event runs through the
//! [`MappingRuleSet`] and lands in the KB as ordinary facts carrying the
//! provider's source tag and confidence.

mod mapping;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

pub use mapping::{camel_case, Emitted, FactTemplate, Guard, KindMapping, MappingRule, MappingRuleSet, TranslateError};

use crate::kb::{Fact, FactId, KbError, KnowledgeBase, SourceTag, Value};
use crate::ontology::ValidationError;
use crate::time::Timestamp;

/// Payload field values are strings, numbers or booleans.
pub type Payload = BTreeMap<String, Json>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Timetable,
    Calendar,
    Email,
    Weather,
    Profile,
    Generic,
}

impl ProviderKind {
    pub const ALL: [ProviderKind; 6] = [
        ProviderKind::Timetable,
        ProviderKind::Calendar,
        ProviderKind::Email,
        ProviderKind::Weather,
        ProviderKind::Profile,
        ProviderKind::Generic,
    ];

    pub fn parse(s: &str) -> Option<ProviderKind> {
        ProviderKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Timetable => "timetable",
            ProviderKind::Calendar => "calendar",
            ProviderKind::Email => "email",
            ProviderKind::Weather => "weather",
            ProviderKind::Profile => "profile",
            ProviderKind::Generic => "generic",
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    #[default]
    Push,
    Poll {
        interval_minutes: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderDescriptor {
    pub provider_id: String,
    pub kind: ProviderKind,
    pub default_source: SourceTag,
    /// Falls back to the confidence table entry for `default_source`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_confidence: Option<f64>,
    #[serde(default)]
    pub mode: ProviderMode,
}

impl ProviderDescriptor {
    pub fn push(provider_id: &str, kind: ProviderKind, default_source: SourceTag) -> ProviderDescriptor {
        ProviderDescriptor {
            provider_id: provider_id.to_string(),
            kind,
            default_source,
            default_confidence: None,
            mode: ProviderMode::Push,
        }
    }

    pub fn with_confidence(mut self, c: f64) -> ProviderDescriptor {
        self.default_confidence = Some(c);
        self
    }

    pub fn polled_every(mut self, minutes: u64) -> ProviderDescriptor {
        self.mode = ProviderMode::Poll { interval_minutes: minutes };
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderEvent {
    pub provider_id: String,
    pub event_time: Timestamp,
    pub payload: Payload,
    pub sequence_no: u64,
}

/// Default confidence per acquisition source tag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceTable {
    #[serde(rename = "Defined")]
    pub defined: f64,
    #[serde(rename = "Sensed")]
    pub sensed: f64,
    #[serde(rename = "Planned")]
    pub planned: f64,
    #[serde(rename = "Aggregated")]
    pub aggregated: f64,
}

impl Default for ConfidenceTable {
    fn default() -> Self {
        ConfidenceTable { defined: 1.0, sensed: 0.9, planned: 0.8, aggregated: 0.7 }
    }
}

impl ConfidenceTable {
    /// `None` for the derived tags, which acquisition never assigns.
    pub fn get(&self, tag: SourceTag) -> Option<f64> {
        match tag {
            SourceTag::Defined => Some(self.defined),
            SourceTag::Sensed => Some(self.sensed),
            SourceTag::Planned => Some(self.planned),
            SourceTag::Aggregated => Some(self.aggregated),
            SourceTag::Scheduled | SourceTag::Deduced => None,
        }
    }

    /// Values lie in `[0, 1]` and strictly decrease from Defined to Aggregated.
    pub fn validate(&self) -> Result<(), String> {
        let v = [self.defined, self.sensed, self.planned, self.aggregated];
        if v.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err("confidence table values must lie in [0, 1]".into());
        }
        if v.windows(2).any(|w| w[0] <= w[1]) {
            return Err("confidence table must strictly decrease Defined > Sensed > Planned > Aggregated".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("provider `{0}` is already registered")]
    DuplicateProvider(String),
    #[error("provider `{0}` has a zero poll interval")]
    InvalidInterval(String),
    #[error("provider `{id}`: {reason}")]
    InvalidDescriptor { id: String, reason: String },
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("stale event from `{provider}`: sequence {seq} is not after {last}")]
    StaleEvent { provider: String, seq: u64, last: u64 },
    #[error("no {kind} mapping rule matches the payload from `{provider}`")]
    UnmappedPayload { provider: String, kind: ProviderKind },
    #[error("mapping for `{provider}`: {reason}")]
    Template { provider: String, reason: String },
    #[error("mapping file: {0}")]
    MappingFile(String),
    #[error(transparent)]
    Kb(#[from] KbError),
}

#[derive(Clone, Debug)]
struct ProviderState {
    descriptor: ProviderDescriptor,
    last_seq: Option<u64>,
    next_poll: Option<Timestamp>,
}

/// The acquisition layer: provider registry plus mapping.
#[derive(Clone, Debug)]
pub struct Acquisition {
    mapping: MappingRuleSet,
    table: ConfidenceTable,
    providers: BTreeMap<String, ProviderState>,
}

impl Acquisition {
    pub fn new(mapping: MappingRuleSet, table: ConfidenceTable) -> Acquisition {
        Acquisition { mapping, table, providers: BTreeMap::new() }
    }

    pub fn mapping(&self) -> &MappingRuleSet {
        &self.mapping
    }

    pub fn confidence_table(&self) -> &ConfidenceTable {
        &self.table
    }

    pub fn register_provider(&mut self, d: ProviderDescriptor) -> Result<(), AcquisitionError> {
        let invalid = |reason: &str| AcquisitionError::InvalidDescriptor { id: d.provider_id.clone(), reason: reason.into() };
        if d.provider_id.is_empty() {
            return Err(invalid("empty provider id"));
        }
        if self.providers.contains_key(&d.provider_id) {
            return Err(AcquisitionError::DuplicateProvider(d.provider_id));
        }
        if d.default_source.is_derived() {
            return Err(invalid("derived source tags are reserved for the reasoner"));
        }
        if matches!(d.default_confidence, Some(c) if !(0.0..=1.0).contains(&c)) {
            return Err(invalid("default confidence outside [0, 1]"));
        }
        if d.mode == (ProviderMode::Poll { interval_minutes: 0 }) {
            return Err(AcquisitionError::InvalidInterval(d.provider_id));
        }
        self.providers.insert(d.provider_id.clone(), ProviderState { descriptor: d, last_seq: None, next_poll: None });
        Ok(())
    }

    pub fn provider(&self, id: &str) -> Option<&ProviderDescriptor> {
        self.providers.get(id).map(|s| &s.descriptor)
    }

    pub fn providers(&self) -> impl Iterator<Item = &ProviderDescriptor> {
        self.providers.values().map(|s| &s.descriptor)
    }

    /// Highest sequence number accepted from a provider.
    pub fn last_seen(&self, id: &str) -> Option<u64> {
        self.providers.get(id).and_then(|s| s.last_seq)
    }

    /// Translates an event into facts without touching the KB or the
    /// sequence bookkeeping.
    pub fn translate(&self, e: &ProviderEvent) -> Result<Vec<Fact>, AcquisitionError> {
        let state = self.providers.get(&e.provider_id).ok_or_else(|| AcquisitionError::UnknownProvider(e.provider_id.clone()))?;
        let d = &state.descriptor;
        let emitted = self.mapping.translate(d.kind, e.event_time, &e.payload).map_err(|err| match err {
            TranslateError::NoRule => AcquisitionError::UnmappedPayload { provider: d.provider_id.clone(), kind: d.kind },
            TranslateError::Template(reason) => AcquisitionError::Template { provider: d.provider_id.clone(), reason },
        })?;
        Ok(emitted
            .into_iter()
            .map(|m| {
                let source = m.source.unwrap_or(d.default_source);
                let confidence = m
                    .confidence
                    .or(if source == d.default_source { d.default_confidence } else { None })
                    .or_else(|| self.table.get(source))
                    .expect("acquisition tags have table entries");
                Fact {
                    fact_id: FactId::UNASSIGNED,
                    subject: m.subject,
                    predicate: m.predicate,
                    object: m.object,
                    valid_from: m.valid_from,
                    valid_to: m.valid_to,
                    source,
                    confidence,
                    provider: d.provider_id.clone(),
                }
            })
            .collect())
    }

    /// Checks sequencing, translates, validates every fact, then adds them
    /// all. Nothing is stored and the sequence does not advance on error.
    pub fn ingest(&mut self, kb: &mut KnowledgeBase, e: &ProviderEvent) -> Result<Vec<FactId>, AcquisitionError> {
        let state = self.providers.get(&e.provider_id).ok_or_else(|| AcquisitionError::UnknownProvider(e.provider_id.clone()))?;
        if let Some(last) = state.last_seq {
            if e.sequence_no <= last {
                return Err(AcquisitionError::StaleEvent { provider: e.provider_id.clone(), seq: e.sequence_no, last });
            }
        }
        let facts = self.translate(e)?;
        for f in &facts {
            kb.check(f)?;
        }
        let ids = facts.into_iter().map(|f| kb.add_fact(f)).collect::<Result<Vec<_>, _>>()?;
        self.providers.get_mut(&e.provider_id).expect("checked").last_seq = Some(e.sequence_no);
        Ok(ids)
    }

    /// Records a user-stated fact: Defined, full confidence, provider
    /// `user:<subject>`.
    pub fn user_update(
        &self,
        kb: &mut KnowledgeBase,
        subject: &str,
        predicate: &str,
        object: Value,
        at: Timestamp,
    ) -> Result<FactId, AcquisitionError> {
        let empty = match &object {
            Value::Ident(s) | Value::Text(s) => s.trim().is_empty(),
            _ => false,
        };
        if empty {
            return Err(KbError::ValidationFailed(ValidationError::RangeViolation {
                predicate: predicate.to_string(),
                object: String::new(),
                expected: "a non-empty value".into(),
                found: "nothing".into(),
            })
            .into());
        }
        let fact = Fact::new(subject, predicate, object, at, SourceTag::Defined, 1.0, format!("user:{subject}"));
        Ok(kb.add_fact(fact)?)
    }

    /// When a poll-mode provider is next due; `None` before its first poll.
    pub fn next_poll(&self, id: &str) -> Option<Timestamp> {
        self.providers.get(id).and_then(|s| s.next_poll)
    }

    /// Poll-mode providers due at `now`, in id order. Each is rescheduled one
    /// interval after `now`; a provider's first poll is due immediately.
    pub fn due_polls(&mut self, now: Timestamp) -> Vec<String> {
        let mut due = Vec::new();
        for (id, s) in self.providers.iter_mut() {
            let ProviderMode::Poll { interval_minutes } = s.descriptor.mode else { continue };
            if s.next_poll.is_none_or(|t| t <= now) {
                due.push(id.clone());
                s.next_poll = Some(now.plus_minutes(interval_minutes as i64));
            }
        }
        due
    }
}

#[cfg(test)]
mod tests;

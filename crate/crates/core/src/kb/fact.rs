use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::time::{Interval, Timestamp};

/// Provider name reserved for facts written by the reasoning engine.
pub const REASONER_PROVIDER: &str = "reasoner";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactId(pub u64);

impl FactId {
    /// Placeholder carried by facts that have not been stored yet.
    pub const UNASSIGNED: FactId = FactId(0);

    pub fn is_assigned(&self) -> bool {
        self.0 != 0
    }
}

impl fmt::Display for FactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Where a fact came from.
///
/// `Defined`, `Sensed`, `Planned` and `Aggregated` are acquired from providers
/// or users; `Scheduled` and `Deduced` are only ever assigned by the reasoner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SourceTag {
    Defined,
    Sensed,
    Planned,
    Aggregated,
    Scheduled,
    Deduced,
}

impl SourceTag {
    pub const ALL: [SourceTag; 6] =
        [SourceTag::Defined, SourceTag::Sensed, SourceTag::Planned, SourceTag::Aggregated, SourceTag::Scheduled, SourceTag::Deduced];

    pub fn is_derived(self) -> bool {
        matches!(self, SourceTag::Scheduled | SourceTag::Deduced)
    }

    /// Rank used to break confidence ties during conflict resolution; lower wins.
    pub fn precedence(self) -> u8 {
        match self {
            SourceTag::Defined => 0,
            SourceTag::Sensed => 1,
            SourceTag::Planned => 2,
            SourceTag::Aggregated => 3,
            SourceTag::Scheduled => 4,
            SourceTag::Deduced => 5,
        }
    }

    pub fn parse(s: &str) -> Option<SourceTag> {
        SourceTag::ALL.into_iter().find(|tag| tag.as_str().eq_ignore_ascii_case(s))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Defined => "Defined",
            SourceTag::Sensed => "Sensed",
            SourceTag::Planned => "Planned",
            SourceTag::Aggregated => "Aggregated",
            SourceTag::Scheduled => "Scheduled",
            SourceTag::Deduced => "Deduced",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A numeric literal. Equality and hashing are bitwise on the canonical `f64`
/// so numbers can sit inside hashed tuples.
#[derive(Clone, Copy, Debug)]
pub struct Number(f64);

impl Number {
    pub fn new(v: f64) -> Self {
        // fold -0.0 into 0.0 so equal numbers hash equally
        Number(if v == 0.0 { 0.0 } else { v })
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl PartialEq for Number {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for Number {}

impl Hash for Number {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state)
    }
}

impl PartialOrd for Number {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Number {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// The object position of a fact: an individual/class identifier or a literal.
///
/// JSON form: a bare string is an identifier, numbers and booleans are
/// literals, and `{"text": "..."}` is a string literal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "ValueRepr", into = "ValueRepr")]
pub enum Value {
    Ident(String),
    Text(String),
    Number(Number),
    Bool(bool),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ValueRepr {
    Ident(String),
    Bool(bool),
    Number(f64),
    Text { text: String },
}

impl From<ValueRepr> for Value {
    fn from(value: ValueRepr) -> Self {
        match value {
            ValueRepr::Ident(s) => Value::Ident(s),
            ValueRepr::Bool(b) => Value::Bool(b),
            ValueRepr::Number(n) => Value::Number(Number::new(n)),
            ValueRepr::Text { text } => Value::Text(text),
        }
    }
}

impl From<Value> for ValueRepr {
    fn from(value: Value) -> Self {
        match value {
            Value::Ident(s) => ValueRepr::Ident(s),
            Value::Bool(b) => ValueRepr::Bool(b),
            Value::Number(n) => ValueRepr::Number(n.get()),
            Value::Text(text) => ValueRepr::Text { text },
        }
    }
}

impl Value {
    pub fn ident(s: impl Into<String>) -> Self {
        Value::Ident(s.into())
    }

    pub fn as_ident(&self) -> Option<&str> {
        match self {
            Value::Ident(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_literal(&self) -> bool {
        !matches!(self, Value::Ident(_))
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Ident(s.to_string())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Ident(s) => f.write_str(s),
            Value::Text(s) => write!(f, "{s:?}"),
            Value::Number(n) => write!(f, "{}", n.get()),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

/// A timestamped, confidence-weighted, provenance-tagged triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    #[serde(default)]
    pub fact_id: FactId,
    pub subject: String,
    pub predicate: String,
    pub object: Value,
    pub valid_from: Timestamp,
    #[serde(default)]
    pub valid_to: Option<Timestamp>,
    pub source: SourceTag,
    pub confidence: f64,
    pub provider: String,
}

impl Fact {
    /// A fact with an open-ended validity interval and no id.
    pub fn new(
        subject: impl Into<String>,
        predicate: impl Into<String>,
        object: impl Into<Value>,
        valid_from: Timestamp,
        source: SourceTag,
        confidence: f64,
        provider: impl Into<String>,
    ) -> Self {
        Fact {
            fact_id: FactId::UNASSIGNED,
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
            valid_from,
            valid_to: None,
            source,
            confidence,
            provider: provider.into(),
        }
    }

    pub fn until(mut self, valid_to: Timestamp) -> Self {
        self.valid_to = Some(valid_to);
        self
    }

    pub fn interval(&self) -> Interval {
        Interval::new(self.valid_from, self.valid_to)
    }

    pub fn is_derived(&self) -> bool {
        self.provider == REASONER_PROVIDER
    }

    /// Equality ignoring the KB-assigned id.
    pub fn same_content(&self, other: &Fact) -> bool {
        Fact { fact_id: other.fact_id, ..self.clone() } == *other
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({}, {}) {} {} {:.3} via {}",
            self.predicate,
            self.subject,
            self.object,
            self.interval(),
            self.source,
            self.confidence,
            self.provider
        )
    }
}

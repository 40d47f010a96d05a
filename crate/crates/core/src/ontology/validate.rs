use thiserror::Error;

use super::{Ontology, Range};
use crate::kb::{Fact, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidationError {
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("subject `{subject}` of {predicate} is {found}, expected a {expected}")]
    DomainViolation { predicate: String, subject: String, expected: String, found: String },
    #[error("object `{object}` of {predicate} is {found}, expected a {expected}")]
    RangeViolation { predicate: String, object: String, expected: String, found: String },
}

pub type ValidationResult = Result<(), ValidationError>;

impl Ontology {
    /// Checks a fact against its predicate signature. Subjects and
    /// identifier objects are typed through [`Ontology::resolve_class`].
    pub fn validate_fact(&self, fact: &Fact) -> ValidationResult {
        let sig = self.predicate(&fact.predicate).ok_or_else(|| ValidationError::UnknownPredicate(fact.predicate.clone()))?;

        match self.resolve_class(&fact.subject) {
            Some(class) if self.reaches(class.as_str(), &sig.domain) => {}
            other => {
                return Err(ValidationError::DomainViolation {
                    predicate: sig.name.clone(),
                    subject: fact.subject.clone(),
                    expected: sig.domain.clone(),
                    found: describe(other.map(|c| c.as_str())),
                })
            }
        }

        let range_violation = |found: String| ValidationError::RangeViolation {
            predicate: sig.name.clone(),
            object: fact.object.to_string(),
            expected: sig.range.to_string(),
            found,
        };
        match (&sig.range, &fact.object) {
            (Range::Literal, Value::Ident(_)) => Err(range_violation("an identifier".into())),
            (Range::Literal, _) => Ok(()),
            (Range::Class(_), v) if v.is_literal() => Err(range_violation("a literal".into())),
            (Range::Class(range), Value::Ident(name)) => match self.resolve_class(name) {
                Some(class) if self.reaches(class.as_str(), range) => Ok(()),
                other => Err(range_violation(describe(other.map(|c| c.as_str())))),
            },
            (Range::Class(_), _) => unreachable!("literal objects handled above"),
        }
    }
}

fn describe(class: Option<&str>) -> String {
    match class {
        Some(c) => format!("a {c}"),
        None => "undeclared".to_string(),
    }
}

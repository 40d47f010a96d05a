use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::fact::{Fact, FactId, Number, SourceTag, Value};
use crate::ontology::is_identifier;
use crate::time::Timestamp;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed pattern `{input}`: {reason}")]
pub struct MalformedPattern {
    pub input: String,
    pub reason: String,
}

/// One position of a pattern.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    /// `?name`; repeated names must bind equal values.
    Var(String),
    Const(Value),
    /// `_`
    Any,
}

impl Slot {
    pub fn var(name: &str) -> Slot {
        Slot::Var(name.trim_start_matches('?').to_string())
    }

    pub fn constant(v: impl Into<Value>) -> Slot {
        Slot::Const(v.into())
    }

    /// Parses one term: `?x`, `_`, an identifier, a quoted string, a number
    /// or `true`/`false`.
    pub fn parse(term: &str) -> Result<Slot, String> {
        let term = term.trim();
        if term == "_" {
            return Ok(Slot::Any);
        }
        if let Some(name) = term.strip_prefix('?') {
            return if is_identifier(name) { Ok(Slot::Var(name.to_string())) } else { Err(format!("bad variable `{term}`")) };
        }
        if term.len() >= 2 && term.starts_with('"') && term.ends_with('"') {
            return serde_json::from_str::<String>(term)
                .map(|s| Slot::Const(Value::Text(s)))
                .map_err(|e| format!("bad string literal: {e}"));
        }
        match term {
            "true" => return Ok(Slot::Const(Value::Bool(true))),
            "false" => return Ok(Slot::Const(Value::Bool(false))),
            _ => {}
        }
        if term.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+') {
            return term
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(|v| Slot::Const(Value::Number(Number::new(v))))
                .ok_or_else(|| format!("bad number `{term}`"));
        }
        if is_identifier(term) {
            Ok(Slot::Const(Value::Ident(term.to_string())))
        } else {
            Err(format!("bad term `{term}`"))
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Var(v) => write!(f, "?{v}"),
            Slot::Const(c) => write!(f, "{c}"),
            Slot::Any => f.write_str("_"),
        }
    }
}

/// Variable assignment produced by a match.
pub type Vars = BTreeMap<String, Value>;

/// One query answer: the matching fact and the variable assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub fact_id: FactId,
    pub vars: Vars,
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.vars.is_empty() {
            return write!(f, "{}", self.fact_id);
        }
        let mut first = true;
        for (k, v) in &self.vars {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            write!(f, "?{k}={v}")?;
        }
        Ok(())
    }
}

/// A query or subscription pattern over single facts.
///
/// Textual form: `Predicate(subject, object)`, with `*` as a wildcard
/// predicate. `time_at` restricts matches to facts whose validity covers the
/// instant; when absent every interval matches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    pub predicate: Option<String>,
    pub subject: Slot,
    pub object: Slot,
    pub time_at: Option<Timestamp>,
    pub source_filter: Option<BTreeSet<SourceTag>>,
}

impl Pattern {
    pub fn new(predicate: &str, subject: Slot, object: Slot) -> Pattern {
        Pattern { predicate: (predicate != "*").then(|| predicate.to_string()), subject, object, time_at: None, source_filter: None }
    }

    pub fn at(mut self, at: Timestamp) -> Pattern {
        self.time_at = Some(at);
        self
    }

    pub fn with_sources(mut self, sources: impl IntoIterator<Item = SourceTag>) -> Pattern {
        self.source_filter = Some(sources.into_iter().collect());
        self
    }

    pub fn parse(input: &str) -> Result<Pattern, MalformedPattern> {
        let err = |reason: &str| MalformedPattern { input: input.to_string(), reason: reason.to_string() };
        let text = input.trim();
        let open = text.find('(').ok_or_else(|| err("expected `Predicate(subject, object)`"))?;
        if !text.ends_with(')') {
            return Err(err("missing closing parenthesis"));
        }
        let pred = text[..open].trim();
        if pred != "*" && !is_identifier(pred) {
            return Err(err("predicate must be an identifier or `*`"));
        }
        let args = split_args(&text[open + 1..text.len() - 1]).map_err(|r| err(&r))?;
        if args.len() != 2 {
            return Err(err("expected exactly two arguments"));
        }
        let subject = Slot::parse(&args[0]).map_err(|r| err(&r))?;
        if let Slot::Const(v) = &subject {
            if v.is_literal() {
                return Err(err("subject must be an identifier"));
            }
        }
        let object = Slot::parse(&args[1]).map_err(|r| err(&r))?;
        Ok(Pattern::new(pred, subject, object))
    }

    pub fn variables(&self) -> BTreeSet<&str> {
        [&self.subject, &self.object]
            .into_iter()
            .filter_map(|s| match s {
                Slot::Var(v) => Some(v.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Matches a fact, returning the variable assignment on success.
    pub fn matches(&self, fact: &Fact) -> Option<Vars> {
        if let Some(p) = &self.predicate {
            if *p != fact.predicate {
                return None;
            }
        }
        if let Some(at) = self.time_at {
            if !fact.interval().contains(at) {
                return None;
            }
        }
        if let Some(filter) = &self.source_filter {
            if !filter.contains(&fact.source) {
                return None;
            }
        }
        let mut vars = Vars::new();
        let subject = Value::Ident(fact.subject.clone());
        for (slot, value) in [(&self.subject, &subject), (&self.object, &fact.object)] {
            match slot {
                Slot::Any => {}
                Slot::Const(c) => {
                    if c != value {
                        return None;
                    }
                }
                Slot::Var(name) => match vars.get(name) {
                    Some(bound) if bound != value => return None,
                    Some(_) => {}
                    None => {
                        vars.insert(name.clone(), value.clone());
                    }
                },
            }
        }
        Some(vars)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}, {})", self.predicate.as_deref().unwrap_or("*"), self.subject, self.object)
    }
}

impl std::str::FromStr for Pattern {
    type Err = MalformedPattern;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pattern::parse(s)
    }
}

/// Splits on top-level commas, leaving commas inside quoted strings alone.
fn split_args(inner: &str) -> Result<Vec<String>, String> {
    let mut args = Vec::new();
    let mut cur = String::new();
    let mut in_str = false;
    let mut escaped = false;
    for c in inner.chars() {
        if in_str {
            cur.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                cur.push(c);
            }
            ',' => args.push(std::mem::take(&mut cur)),
            '(' | ')' => return Err("unexpected parenthesis".into()),
            _ => cur.push(c),
        }
    }
    if in_str {
        return Err("unterminated string".into());
    }
    args.push(cur);
    Ok(args)
}

//! Payload-to-fact translation driven by a mapping file.
//!
//! ```json
//! {"kind":"weather","rules":[{"when":{"has":["condition"]},
//!   "emit":[{"pred":"WeatherCond","subj":"Weather","obj":"${condition}"}]}]}
//! ```
//!
//! A file holds one such object or an array of them. Within a kind the first
//! rule whose guard holds wins. `${field}` in a template is replaced by the
//! payload value; a template that is exactly `${field}` keeps the value's
//! JSON type, so numbers become numeric literals. Multi-word strings used as
//! identifiers are folded to CamelCase (`"out for conference"` becomes
//! `OutForConference`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::{AcquisitionError, Payload, ProviderKind};
use crate::kb::{Number, SourceTag, Value};
use crate::ontology::{is_identifier, Ontology};
use crate::time::Timestamp;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guard {
    /// Fields that must be present.
    #[serde(default)]
    pub has: Vec<String>,
    /// Fields that must equal the given value.
    #[serde(default)]
    pub equals: BTreeMap<String, Json>,
}

impl Guard {
    pub fn holds(&self, payload: &Payload) -> bool {
        self.has.iter().all(|f| payload.contains_key(f)) && self.equals.iter().all(|(k, v)| payload.get(k) == Some(v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactTemplate {
    pub pred: String,
    pub subj: String,
    /// A string template, a literal number/bool, or `{"text": template}`.
    pub obj: Json,
    /// RFC 3339 time; defaults to the event time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    /// Alternative to `to`: a number or a `${field}` holding one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_minutes: Option<Json>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingRule {
    #[serde(default)]
    pub when: Guard,
    pub emit: Vec<FactTemplate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindMapping {
    pub kind: ProviderKind,
    pub rules: Vec<MappingRule>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MappingFile {
    Many(Vec<KindMapping>),
    One(KindMapping),
}

/// A fact template with every field resolved, before provenance is attached.
#[derive(Clone, Debug, PartialEq)]
pub struct Emitted {
    pub predicate: String,
    pub subject: String,
    pub object: Value,
    pub valid_from: Timestamp,
    pub valid_to: Option<Timestamp>,
    pub source: Option<SourceTag>,
    pub confidence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TranslateError {
    /// No guard for the provider kind holds.
    NoRule,
    Template(String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MappingRuleSet {
    kinds: BTreeMap<ProviderKind, Vec<MappingRule>>,
}

impl MappingRuleSet {
    pub fn from_json(text: &str) -> Result<MappingRuleSet, AcquisitionError> {
        let file: MappingFile = serde_json::from_str(text).map_err(|e| AcquisitionError::MappingFile(e.to_string()))?;
        let list = match file {
            MappingFile::Many(v) => v,
            MappingFile::One(k) => vec![k],
        };
        let mut set = MappingRuleSet::default();
        for k in list {
            set.extend(k)?;
        }
        Ok(set)
    }

    /// Appends a kind's rules after any already loaded.
    pub fn extend(&mut self, k: KindMapping) -> Result<(), AcquisitionError> {
        for rule in &k.rules {
            if rule.emit.is_empty() {
                return Err(AcquisitionError::MappingFile(format!("a {} rule emits nothing", k.kind)));
            }
            for t in &rule.emit {
                if matches!(t.source, Some(s) if s.is_derived()) {
                    return Err(AcquisitionError::MappingFile(format!("template for {} uses a derived source tag", t.pred)));
                }
                if matches!(t.confidence, Some(c) if !(0.0..=1.0).contains(&c)) {
                    return Err(AcquisitionError::MappingFile(format!("template for {} has confidence outside [0, 1]", t.pred)));
                }
            }
        }
        self.kinds.entry(k.kind).or_default().extend(k.rules);
        Ok(())
    }

    pub fn rules_for(&self, kind: ProviderKind) -> &[MappingRule] {
        self.kinds.get(&kind).map_or(&[], Vec::as_slice)
    }

    pub fn to_json(&self) -> String {
        let list: Vec<KindMapping> = self.kinds.iter().map(|(k, r)| KindMapping { kind: *k, rules: r.clone() }).collect();
        serde_json::to_string_pretty(&list).expect("mapping serializes")
    }

    /// Every literal template predicate must be declared.
    pub fn check_against(&self, ontology: &Ontology) -> Result<(), AcquisitionError> {
        for (kind, rules) in &self.kinds {
            for t in rules.iter().flat_map(|r| &r.emit) {
                if !t.pred.contains("${") && ontology.predicate(&t.pred).is_none() {
                    return Err(AcquisitionError::MappingFile(format!("{kind} template predicate `{}` is not in the ontology", t.pred)));
                }
            }
        }
        Ok(())
    }

    /// Translates a payload with the first matching rule for `kind`.
    pub fn translate(&self, kind: ProviderKind, event_time: Timestamp, payload: &Payload) -> Result<Vec<Emitted>, TranslateError> {
        let rule = self.rules_for(kind).iter().find(|r| r.when.holds(payload)).ok_or(TranslateError::NoRule)?;
        rule.emit.iter().map(|t| fill(t, event_time, payload)).collect::<Result<_, _>>().map_err(TranslateError::Template)
    }
}

fn fill(t: &FactTemplate, event_time: Timestamp, payload: &Payload) -> Result<Emitted, String> {
    let predicate = ident(&substitute(&t.pred, payload)?)?;
    let subject = ident(&substitute(&t.subj, payload)?)?;
    let object = match &t.obj {
        Json::String(s) => match whole_field(s).map(|f| field(payload, f)) {
            Some(Ok(Json::Number(n))) => Value::Number(Number::new(n.as_f64().ok_or("number out of range")?)),
            Some(Ok(Json::Bool(b))) => Value::Bool(*b),
            Some(Err(e)) => return Err(e),
            _ => Value::Ident(ident(&substitute(s, payload)?)?),
        },
        Json::Number(n) => Value::Number(Number::new(n.as_f64().ok_or("number out of range")?)),
        Json::Bool(b) => Value::Bool(*b),
        Json::Object(m) if m.len() == 1 && m.get("text").is_some_and(Json::is_string) => {
            Value::Text(substitute(m["text"].as_str().expect("checked"), payload)?)
        }
        other => return Err(format!("unsupported object template {other}")),
    };
    let time = |s: &str| -> Result<Timestamp, String> {
        let v = substitute(s, payload)?;
        Timestamp::parse(&v).map_err(|e| format!("bad time `{v}`: {e}"))
    };
    let valid_from = t.from.as_deref().map(time).transpose()?.unwrap_or(event_time);
    let mut valid_to = t.to.as_deref().map(time).transpose()?;
    if let Some(d) = &t.duration_minutes {
        let minutes = match d {
            Json::Number(n) => n.as_f64(),
            Json::String(s) => match whole_field(s).map(|f| field(payload, f)) {
                Some(Ok(Json::Number(n))) => n.as_f64(),
                Some(Ok(Json::String(v))) => v.parse().ok(),
                Some(Err(e)) => return Err(e),
                _ => substitute(s, payload)?.parse().ok(),
            },
            _ => None,
        }
        .filter(|m| m.is_finite() && *m >= 0.0)
        .ok_or_else(|| format!("bad duration {d}"))?;
        valid_to = Some(valid_from.plus_seconds((minutes * 60.0).round() as i64));
    }
    Ok(Emitted { predicate, subject, object, valid_from, valid_to, source: t.source, confidence: t.confidence })
}

fn whole_field(s: &str) -> Option<&str> {
    s.strip_prefix("${").and_then(|r| r.strip_suffix('}')).filter(|f| !f.contains("${") && !f.contains('}'))
}

fn field<'p>(payload: &'p Payload, name: &str) -> Result<&'p Json, String> {
    payload.get(name).ok_or_else(|| format!("payload has no field `{name}`"))
}

fn substitute(template: &str, payload: &Payload) -> Result<String, String> {
    let mut out = String::new();
    let mut rest = template;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let end = rest[start..].find('}').ok_or_else(|| format!("unclosed `${{` in `{template}`"))? + start;
        match field(payload, &rest[start + 2..end])? {
            Json::String(s) => out.push_str(s),
            other => out.push_str(&other.to_string()),
        }
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Folds a multi-word string to CamelCase; single words pass through.
pub fn camel_case(s: &str) -> String {
    let words: Vec<&str> = s.split(|c: char| !c.is_alphanumeric() && c != '_').filter(|w| !w.is_empty()).collect();
    if words.len() <= 1 {
        return s.trim().to_string();
    }
    words
        .iter()
        .map(|w| {
            let mut cs = w.chars();
            cs.next().map(|c| c.to_uppercase().chain(cs).collect::<String>()).unwrap_or_default()
        })
        .collect()
}

fn ident(s: &str) -> Result<String, String> {
    let id = camel_case(s);
    if is_identifier(&id) {
        Ok(id)
    } else {
        Err(format!("`{s}` does not name an identifier"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload(j: Json) -> Payload {
        serde_json::from_value(j).unwrap()
    }

    #[test]
    fn camel_case_folding() {
        assert_eq!(camel_case("out for conference"), "OutForConference");
        assert_eq!(camel_case("Snowing"), "Snowing");
        assert_eq!(camel_case("discussing-on project"), "DiscussingOnProject");
        assert_eq!(camel_case("  Meeting "), "Meeting");
    }

    #[test]
    fn substitution_keeps_whole_field_types() {
        let m = MappingRuleSet::from_json(
            r#"{"kind":"weather","rules":[
                {"when":{"has":["temperature"]},"emit":[{"pred":"Temperature","subj":"Weather","obj":"${temperature}"}]},
                {"when":{"has":["condition"],"equals":{"unit":"c"}},"emit":[{"pred":"WeatherCond","subj":"Weather","obj":"${condition}","duration_minutes":"${hours}0"}]}]}"#,
        )
        .unwrap();
        let t = Timestamp::from_unix(0);
        let out = m.translate(ProviderKind::Weather, t, &payload(serde_json::json!({"temperature": -3.5}))).unwrap();
        assert_eq!(out[0].object, Value::Number(Number::new(-3.5)));
        let out = m
            .translate(ProviderKind::Weather, t, &payload(serde_json::json!({"condition": "light snow", "unit": "c", "hours": 3})))
            .unwrap();
        assert_eq!(out[0].object, Value::ident("LightSnow"));
        assert_eq!(out[0].valid_to, Some(t.plus_minutes(30)));
        assert_eq!(m.translate(ProviderKind::Weather, t, &payload(serde_json::json!({"condition": "x"}))), Err(TranslateError::NoRule));
        assert_eq!(m.translate(ProviderKind::Email, t, &payload(serde_json::json!({}))), Err(TranslateError::NoRule));
    }

    #[test]
    fn bad_templates_report_errors() {
        let m = MappingRuleSet::from_json(
            r#"[{"kind":"generic","rules":[{"when":{"has":["a"]},"emit":[{"pred":"P","subj":"${a}","obj":{"text":"${b}"},"from":"${a}"}]}]}]"#,
        )
        .unwrap();
        let t = Timestamp::from_unix(0);
        let err = m.translate(ProviderKind::Generic, t, &payload(serde_json::json!({"a": "x"}))).unwrap_err();
        assert!(matches!(&err, TranslateError::Template(e) if e.contains("no field `b`")), "{err:?}");
        let err = m.translate(ProviderKind::Generic, t, &payload(serde_json::json!({"a": "x", "b": "y"}))).unwrap_err();
        assert!(matches!(&err, TranslateError::Template(e) if e.contains("bad time")), "{err:?}");
        assert_eq!(m.translate(ProviderKind::Generic, t, &payload(serde_json::json!({}))), Err(TranslateError::NoRule));
        let bad = r#"{"kind":"generic","rules":[{"emit":[{"pred":"P","subj":"a","obj":"b","source":"Deduced"}]}]}"#;
        assert!(MappingRuleSet::from_json(bad).is_err());
    }
}

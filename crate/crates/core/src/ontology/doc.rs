use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use super::PredicateSig;

/// A pluggable low-level ontology layer.
///
/// ```json
/// {"layer":"meeting",
///  "classes":[{"name":"Person","parents":["Entity"]}],
///  "predicates":[{"name":"Timetable","domain":"Person","range":"Location","functional":false}],
///  "individuals":[{"name":"John","class":"Person"}]}
/// ```
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainOntologyDoc {
    pub layer: String,
    #[serde(default)]
    pub classes: Vec<ClassDecl>,
    #[serde(default)]
    pub predicates: Vec<PredicateSig>,
    #[serde(default)]
    pub individuals: Vec<IndividualDecl>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDecl {
    pub name: String,
    #[serde(default)]
    pub parents: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndividualDecl {
    pub name: String,
    pub class: String,
}

#[derive(Debug, Error)]
pub enum DocError {
    #[error("malformed ontology document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown key `{0}` in ontology document")]
    UnknownKey(String),
}

const TOP_KEYS: &[&str] = &["layer", "classes", "predicates", "individuals"];
const CLASS_KEYS: &[&str] = &["name", "parents"];
const PREDICATE_KEYS: &[&str] = &["name", "domain", "range", "functional"];
const INDIVIDUAL_KEYS: &[&str] = &["name", "class"];

impl DomainOntologyDoc {
    pub fn empty(layer: impl Into<String>) -> Self {
        DomainOntologyDoc { layer: layer.into(), ..Default::default() }
    }

    /// Parses a document. In strict mode any key outside the schema is an
    /// error; lenient mode ignores them.
    pub fn from_json(text: &str, strict: bool) -> Result<Self, DocError> {
        let mut raw: Json = serde_json::from_str(text)?;
        if strict {
            check_keys(&raw, TOP_KEYS, "")?;
            for (section, keys) in [("classes", CLASS_KEYS), ("predicates", PREDICATE_KEYS), ("individuals", INDIVIDUAL_KEYS)] {
                if let Some(items) = raw.get(section).and_then(Json::as_array) {
                    for item in items {
                        check_keys(item, keys, section)?;
                    }
                }
            }
        } else {
            strip_unknown(&mut raw);
        }
        Ok(serde_json::from_value(raw)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }
}

fn check_keys(value: &Json, allowed: &[&str], section: &str) -> Result<(), DocError> {
    if let Some(obj) = value.as_object() {
        if let Some(key) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            let path = if section.is_empty() { key.clone() } else { format!("{section}.{key}") };
            return Err(DocError::UnknownKey(path));
        }
    }
    Ok(())
}

fn strip_unknown(raw: &mut Json) {
    if let Some(obj) = raw.as_object_mut() {
        obj.retain(|k, _| TOP_KEYS.contains(&k.as_str()));
        if let Some(Json::Array(items)) = obj.get_mut("predicates") {
            for item in items {
                if let Some(o) = item.as_object_mut() {
                    o.retain(|k, _| PREDICATE_KEYS.contains(&k.as_str()));
                }
            }
        }
    }
}

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::ReasonerError;
use crate::kb::{Slot, Value};
use crate::ontology::{is_identifier, Ontology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// Forward-chained to a fixpoint.
    Inference,
    /// Fires only during conflict resolution, merging an exact set of
    /// contending values into one.
    ConflictResolution,
}

/// `Predicate(subject, object)` with variables in subject/object position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub predicate: String,
    pub subject: Slot,
    pub object: Slot,
}

impl Atom {
    pub fn new(predicate: &str, subject: Slot, object: Slot) -> Atom {
        Atom { predicate: predicate.to_string(), subject, object }
    }

    fn vars(&self) -> impl Iterator<Item = &str> {
        [&self.subject, &self.object].into_iter().filter_map(|s| match s {
            Slot::Var(v) => Some(v.as_str()),
            _ => None,
        })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}, {})", self.predicate, self.subject, self.object)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub id: String,
    pub kind: RuleKind,
    /// Confidence attenuation in `(0, 1]`.
    pub factor: f64,
    pub antecedents: Vec<Atom>,
    pub consequent: Atom,
    pub note: Option<String>,
}

impl Rule {
    pub fn inference(id: &str, factor: f64, antecedents: Vec<Atom>, consequent: Atom) -> Rule {
        Rule { id: id.to_string(), kind: RuleKind::Inference, factor, antecedents, consequent, note: None }
    }

    pub fn merge(id: &str, factor: f64, antecedents: Vec<Atom>, consequent: Atom) -> Rule {
        Rule { id: id.to_string(), kind: RuleKind::ConflictResolution, ..Rule::inference(id, factor, antecedents, consequent) }
    }

    /// Checks range restriction, factor bounds and the shape merge rules need.
    pub fn validate(&self) -> Result<(), ReasonerError> {
        let fail = |reason: String| Err(ReasonerError::RuleValidation { rule: self.id.clone(), reason });
        if self.antecedents.is_empty() {
            return fail("no antecedents".into());
        }
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return fail(format!("factor {} outside (0, 1]", self.factor));
        }
        for atom in self.antecedents.iter().chain([&self.consequent]) {
            if !is_identifier(&atom.predicate) {
                return fail(format!("predicate `{}` is not an identifier", atom.predicate));
            }
            if let Slot::Const(v) = &atom.subject {
                if v.is_literal() {
                    return fail(format!("literal subject in {atom}"));
                }
            }
        }
        let bound: BTreeSet<&str> = self.antecedents.iter().flat_map(Atom::vars).collect();
        for slot in [&self.consequent.subject, &self.consequent.object] {
            match slot {
                Slot::Var(v) if !bound.contains(v.as_str()) => {
                    return fail(format!("consequent variable ?{v} is not bound by any antecedent"))
                }
                Slot::Any => return fail("wildcard in consequent".into()),
                _ => {}
            }
        }
        if self.kind == RuleKind::ConflictResolution {
            let pred = &self.consequent.predicate;
            let mut objects = BTreeSet::new();
            for atom in &self.antecedents {
                if atom.predicate != *pred {
                    return fail("merge antecedents must share the consequent's predicate".into());
                }
                if atom.subject != self.consequent.subject {
                    return fail("merge antecedents must share the consequent's subject".into());
                }
                match &atom.object {
                    Slot::Const(v) if objects.insert(v.clone()) => {}
                    _ => return fail("merge antecedents need distinct constant objects".into()),
                }
            }
            if objects.len() < 2 {
                return fail("merge rules need at least two contenders".into());
            }
        }
        Ok(())
    }

    /// Objects a merge rule's antecedents name.
    pub fn merge_objects(&self) -> BTreeSet<&Value> {
        self.antecedents
            .iter()
            .filter_map(|a| match &a.object {
                Slot::Const(v) => Some(v),
                _ => None,
            })
            .collect()
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.id)?;
        for (i, a) in self.antecedents.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, " => {} [x{}]", self.consequent, self.factor)
    }
}

/// An ordered, validated collection of rules.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> Result<RuleSet, ReasonerError> {
        let mut ids = BTreeSet::new();
        for r in &rules {
            r.validate()?;
            if !ids.insert(r.id.as_str()) {
                return Err(ReasonerError::RuleValidation { rule: r.id.clone(), reason: "duplicate rule id".into() });
            }
        }
        Ok(RuleSet { rules })
    }

    pub fn empty() -> RuleSet {
        RuleSet::default()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn inference(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.kind == RuleKind::Inference)
    }

    pub fn merges(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.kind == RuleKind::ConflictResolution)
    }

    /// A copy without the rule named `id`.
    pub fn without(&self, id: &str) -> RuleSet {
        RuleSet { rules: self.rules.iter().filter(|r| r.id != id).cloned().collect() }
    }

    /// Every predicate a rule mentions must be declared.
    pub fn check_against(&self, ontology: &Ontology) -> Result<(), ReasonerError> {
        for r in &self.rules {
            for atom in r.antecedents.iter().chain([&r.consequent]) {
                if ontology.predicate(&atom.predicate).is_none() {
                    return Err(ReasonerError::RuleValidation {
                        rule: r.id.clone(),
                        reason: format!("predicate `{}` is not in the ontology", atom.predicate),
                    });
                }
            }
        }
        Ok(())
    }

    /// Parses the rules file format:
    ///
    /// ```json
    /// {"rules":[{"id":"R1","kind":"inference","factor":0.95,
    ///   "if":[{"pred":"Timetable","subj":"?u","obj":"Office"}],
    ///   "then":{"pred":"Teaching","subj":"?u","obj":"Class"}}]}
    /// ```
    pub fn from_json(text: &str) -> Result<RuleSet, ReasonerError> {
        let file: RulesFile = serde_json::from_str(text).map_err(|e| ReasonerError::RulesFile(e.to_string()))?;
        let rules = file
            .rules
            .into_iter()
            .map(|r| {
                let atom = |a: AtomJson| -> Result<Atom, ReasonerError> {
                    let subject = Slot::parse(&a.subj).map_err(|reason| ReasonerError::RuleValidation { rule: r.id.clone(), reason })?;
                    let object = match a.obj {
                        Json::String(s) => {
                            Slot::parse(&s).map_err(|reason| ReasonerError::RuleValidation { rule: r.id.clone(), reason })?
                        }
                        other => Slot::Const(serde_json::from_value::<Value>(other).map_err(|e| ReasonerError::RulesFile(e.to_string()))?),
                    };
                    Ok(Atom { predicate: a.pred, subject, object })
                };
                Ok(Rule {
                    id: r.id.clone(),
                    kind: r.kind,
                    factor: r.factor,
                    antecedents: r.antecedents.into_iter().map(atom).collect::<Result<_, _>>()?,
                    consequent: atom(r.consequent)?,
                    note: r.note,
                })
            })
            .collect::<Result<Vec<_>, ReasonerError>>()?;
        RuleSet::new(rules)
    }

    pub fn to_json(&self) -> String {
        let atom = |a: &Atom| AtomJson {
            pred: a.predicate.clone(),
            subj: a.subject.to_string(),
            obj: match &a.object {
                Slot::Const(v) if v.is_literal() => serde_json::to_value(v).expect("value serializes"),
                other => Json::String(other.to_string()),
            },
        };
        let file = RulesFile {
            rules: self
                .rules
                .iter()
                .map(|r| RuleJson {
                    id: r.id.clone(),
                    kind: r.kind,
                    factor: r.factor,
                    antecedents: r.antecedents.iter().map(atom).collect(),
                    consequent: atom(&r.consequent),
                    note: r.note.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("rules serialize")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesFile {
    rules: Vec<RuleJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleJson {
    id: String,
    kind: RuleKind,
    factor: f64,
    #[serde(rename = "if")]
    antecedents: Vec<AtomJson>,
    #[serde(rename = "then")]
    consequent: AtomJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomJson {
    pred: String,
    subj: String,
    obj: Json,
}

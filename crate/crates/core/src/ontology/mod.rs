//! Layered context ontology.
//!
//! The upper layer is fixed: a root `Context` with the four main context
//! types `Entity`, `Location`, `Time` and `Activity` beneath it. Low-level
//! domain layers ([`DomainOntologyDoc`]) can be plugged in and unplugged at
//! runtime; each one contributes classes, predicate signatures and typed
//! individuals, all of which must hang below one of the four upper types.
//!
//! [`Ontology`] is an immutable value. [`Ontology::plug_domain`] and
//! [`Ontology::unplug_domain`] return a new version and leave the receiver
//! untouched.

mod doc;
mod validate;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use doc::{ClassDecl, DocError, DomainOntologyDoc, IndividualDecl};
pub use validate::{ValidationError, ValidationResult};

/// Reserved id of the built-in upper layer.
pub const UPPER_LAYER: &str = "upper";
/// Root of the class hierarchy.
pub const ROOT_CLASS: &str = "Context";
/// The four main context types directly under the root.
pub const UPPER_TYPES: [&str; 4] = ["Entity", "Location", "Time", "Activity"];
/// Reserved range keyword for literal-valued predicates.
pub const LITERAL_RANGE: &str = "Literal";

/// Returns true for `[A-Za-z][A-Za-z0-9_]*`.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic()) && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ClassName(String);

impl ClassName {
    pub fn new(name: impl Into<String>) -> Result<Self, OntologyError> {
        let name = name.into();
        if is_identifier(&name) && name != LITERAL_RANGE {
            Ok(ClassName(name))
        } else {
            Err(OntologyError::InvalidName(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn known(name: &str) -> Self {
        ClassName(name.to_string())
    }
}

impl TryFrom<String> for ClassName {
    type Error = OntologyError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        ClassName::new(value)
    }
}

impl From<ClassName> for String {
    fn from(value: ClassName) -> Self {
        value.0
    }
}

impl fmt::Display for ClassName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for ClassName {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// What a predicate's object may be.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Range {
    Class(String),
    Literal,
}

impl From<String> for Range {
    fn from(value: String) -> Self {
        if value == LITERAL_RANGE {
            Range::Literal
        } else {
            Range::Class(value)
        }
    }
}

impl From<Range> for String {
    fn from(value: Range) -> Self {
        match value {
            Range::Class(c) => c,
            Range::Literal => LITERAL_RANGE.to_string(),
        }
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Range::Class(c) => f.write_str(c),
            Range::Literal => f.write_str(LITERAL_RANGE),
        }
    }
}

/// Signature of a predicate. A functional predicate admits at most one
/// object per subject at any instant.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateSig {
    pub name: String,
    pub domain: String,
    pub range: Range,
    #[serde(default)]
    pub functional: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct ClassEntry {
    parents: BTreeSet<ClassName>,
    layer: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct PredicateEntry {
    sig: PredicateSig,
    layer: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct IndividualEntry {
    class: ClassName,
    layer: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OntologyError {
    #[error("invalid identifier `{0}`")]
    InvalidName(String),
    #[error("layer `{0}` is already plugged")]
    DuplicateLayer(String),
    #[error("`{element}` attaches to unknown class `{class}`")]
    UnknownAttachmentClass { element: String, class: String },
    #[error("plugging would introduce a subclass cycle through `{0}`")]
    CycleIntroduced(String),
    #[error("name `{0}` is already defined")]
    DuplicateName(String),
    #[error("class `{0}` declares no parent")]
    MissingParent(String),
    #[error("class `{0}` is not below Entity, Location, Time or Activity")]
    OutsideUpperTypes(String),
    #[error("the upper layer cannot be unplugged")]
    UpperLayerImmutable,
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("layers {0:?} still depend on this layer")]
    DanglingDependents(Vec<String>),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
}

/// Class hierarchy plus predicate signatures and typed individuals,
/// partitioned into layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ontology {
    classes: BTreeMap<ClassName, ClassEntry>,
    predicates: BTreeMap<String, PredicateEntry>,
    individuals: BTreeMap<String, IndividualEntry>,
    layers: BTreeSet<String>,
}

impl Default for Ontology {
    fn default() -> Self {
        Ontology::load_upper()
    }
}

impl Ontology {
    /// The fixed upper ontology: `Context` with children `Entity`,
    /// `Location`, `Time` and `Activity`.
    pub fn load_upper() -> Ontology {
        let mut classes = BTreeMap::new();
        classes.insert(ClassName::known(ROOT_CLASS), ClassEntry { parents: BTreeSet::new(), layer: UPPER_LAYER.to_string() });
        for name in UPPER_TYPES {
            classes.insert(
                ClassName::known(name),
                ClassEntry { parents: BTreeSet::from([ClassName::known(ROOT_CLASS)]), layer: UPPER_LAYER.to_string() },
            );
        }
        Ontology { classes, predicates: BTreeMap::new(), individuals: BTreeMap::new(), layers: BTreeSet::from([UPPER_LAYER.to_string()]) }
    }

    pub fn classes(&self) -> impl Iterator<Item = &ClassName> {
        self.classes.keys()
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn has_class(&self, name: &str) -> bool {
        self.classes.contains_key(name)
    }

    pub fn parents(&self, name: &str) -> Option<impl Iterator<Item = &ClassName>> {
        self.classes.get(name).map(|e| e.parents.iter())
    }

    /// All `(child, parent)` edges in a stable order.
    pub fn subclass_edges(&self) -> Vec<(ClassName, ClassName)> {
        self.classes.iter().flat_map(|(child, e)| e.parents.iter().map(move |p| (child.clone(), p.clone()))).collect()
    }

    pub fn predicates(&self) -> impl Iterator<Item = &PredicateSig> {
        self.predicates.values().map(|e| &e.sig)
    }

    pub fn predicate(&self, name: &str) -> Option<&PredicateSig> {
        self.predicates.get(name).map(|e| &e.sig)
    }

    pub fn is_functional(&self, predicate: &str) -> bool {
        self.predicate(predicate).is_some_and(|s| s.functional)
    }

    pub fn layers(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(String::as_str)
    }

    pub fn has_layer(&self, layer: &str) -> bool {
        self.layers.contains(layer)
    }

    /// Layer that owns a class, predicate or individual.
    pub fn owner(&self, name: &str) -> Option<&str> {
        self.classes
            .get(name)
            .map(|e| e.layer.as_str())
            .or_else(|| self.predicates.get(name).map(|e| e.layer.as_str()))
            .or_else(|| self.individuals.get(name).map(|e| e.layer.as_str()))
    }

    pub fn individual_class(&self, name: &str) -> Option<&ClassName> {
        self.individuals.get(name).map(|e| &e.class)
    }

    /// Class of a name used in subject or object position: a declared
    /// individual's class, or the class itself when a class name is used
    /// as a value (e.g. `Activity(John, Teaching)`).
    pub fn resolve_class(&self, name: &str) -> Option<&ClassName> {
        self.individual_class(name).or_else(|| self.classes.get_key_value(name).map(|(k, _)| k))
    }

    /// Reflexive, transitive subclass test.
    pub fn is_subclass(&self, a: &str, b: &str) -> Result<bool, OntologyError> {
        for name in [a, b] {
            if !self.classes.contains_key(name) {
                return Err(OntologyError::UnknownClass(name.to_string()));
            }
        }
        Ok(self.reaches(a, b))
    }

    fn reaches(&self, from: &str, to: &str) -> bool {
        if from == to {
            return true;
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([from]);
        while let Some(cur) = queue.pop_front() {
            let Some(entry) = self.classes.get(cur) else { continue };
            for p in &entry.parents {
                if p.as_str() == to {
                    return true;
                }
                if seen.insert(p.as_str()) {
                    queue.push_back(p.as_str());
                }
            }
        }
        false
    }

    /// Returns a new ontology with `doc`'s elements added and owned by
    /// `doc.layer`.
    pub fn plug_domain(&self, doc: &DomainOntologyDoc) -> Result<Ontology, OntologyError> {
        let layer = doc.layer.as_str();
        if !is_identifier(layer) {
            return Err(OntologyError::InvalidName(layer.to_string()));
        }
        if self.layers.contains(layer) {
            return Err(OntologyError::DuplicateLayer(layer.to_string()));
        }

        let mut doc_classes: BTreeMap<&str, &ClassDecl> = BTreeMap::new();
        for decl in &doc.classes {
            let name = ClassName::new(decl.name.clone())?;
            if self.classes.contains_key(name.as_str()) || doc_classes.insert(&decl.name, decl).is_some() {
                return Err(OntologyError::DuplicateName(decl.name.clone()));
            }
        }
        for decl in &doc.classes {
            if decl.parents.is_empty() {
                return Err(OntologyError::MissingParent(decl.name.clone()));
            }
            for parent in &decl.parents {
                if !self.classes.contains_key(parent.as_str()) && !doc_classes.contains_key(parent.as_str()) {
                    return Err(OntologyError::UnknownAttachmentClass { element: decl.name.clone(), class: parent.clone() });
                }
            }
        }
        if let Some(culprit) = find_cycle(&doc_classes) {
            return Err(OntologyError::CycleIntroduced(culprit));
        }

        let mut next = self.clone();
        for decl in &doc.classes {
            let parents = decl.parents.iter().map(|p| ClassName::known(p)).collect();
            next.classes.insert(ClassName::known(&decl.name), ClassEntry { parents, layer: layer.to_string() });
        }
        for decl in &doc.classes {
            if !UPPER_TYPES.iter().any(|t| next.reaches(&decl.name, t)) {
                return Err(OntologyError::OutsideUpperTypes(decl.name.clone()));
            }
        }

        let mut seen_preds = BTreeSet::new();
        for sig in &doc.predicates {
            if !is_identifier(&sig.name) {
                return Err(OntologyError::InvalidName(sig.name.clone()));
            }
            if self.predicates.contains_key(&sig.name) || !seen_preds.insert(sig.name.as_str()) {
                return Err(OntologyError::DuplicateName(sig.name.clone()));
            }
            let mut refs = vec![sig.domain.as_str()];
            if let Range::Class(c) = &sig.range {
                refs.push(c);
            }
            for class in refs {
                if !next.classes.contains_key(class) {
                    return Err(OntologyError::UnknownAttachmentClass { element: sig.name.clone(), class: class.to_string() });
                }
            }
            next.predicates.insert(sig.name.clone(), PredicateEntry { sig: sig.clone(), layer: layer.to_string() });
        }

        for ind in &doc.individuals {
            if !is_identifier(&ind.name) {
                return Err(OntologyError::InvalidName(ind.name.clone()));
            }
            if next.individuals.contains_key(&ind.name) {
                return Err(OntologyError::DuplicateName(ind.name.clone()));
            }
            if !next.classes.contains_key(ind.class.as_str()) {
                return Err(OntologyError::UnknownAttachmentClass { element: ind.name.clone(), class: ind.class.clone() });
            }
            next.individuals.insert(ind.name.clone(), IndividualEntry { class: ClassName::known(&ind.class), layer: layer.to_string() });
        }

        next.layers.insert(layer.to_string());
        Ok(next)
    }

    /// Returns a new ontology without the elements owned by `layer`.
    pub fn unplug_domain(&self, layer: &str) -> Result<Ontology, OntologyError> {
        if layer == UPPER_LAYER {
            return Err(OntologyError::UpperLayerImmutable);
        }
        if !self.layers.contains(layer) {
            return Err(OntologyError::UnknownLayer(layer.to_string()));
        }
        let dependents = self.dependents_of(layer);
        if !dependents.is_empty() {
            return Err(OntologyError::DanglingDependents(dependents.into_iter().collect()));
        }
        let mut next = self.clone();
        next.classes.retain(|_, e| e.layer != layer);
        next.predicates.retain(|_, e| e.layer != layer);
        next.individuals.retain(|_, e| e.layer != layer);
        next.layers.remove(layer);
        Ok(next)
    }

    /// Other layers holding a reference to a class owned by `layer`.
    pub fn dependents_of(&self, layer: &str) -> BTreeSet<String> {
        let owned = |class: &str| self.classes.get(class).is_some_and(|e| e.layer == layer);
        let mut out = BTreeSet::new();
        for entry in self.classes.values().filter(|e| e.layer != layer) {
            if entry.parents.iter().any(|p| owned(p.as_str())) {
                out.insert(entry.layer.clone());
            }
        }
        for entry in self.predicates.values().filter(|e| e.layer != layer) {
            let range_owned = matches!(&entry.sig.range, Range::Class(c) if owned(c));
            if owned(&entry.sig.domain) || range_owned {
                out.insert(entry.layer.clone());
            }
        }
        for entry in self.individuals.values().filter(|e| e.layer != layer) {
            if owned(entry.class.as_str()) {
                out.insert(entry.layer.clone());
            }
        }
        out
    }

    /// Kahn topological sort over the whole graph; true when acyclic.
    pub fn is_acyclic(&self) -> bool {
        let mut indegree: BTreeMap<&str, usize> = self.classes.keys().map(|c| (c.as_str(), 0)).collect();
        for entry in self.classes.values() {
            for p in &entry.parents {
                *indegree.entry(p.as_str()).or_default() += 1;
            }
        }
        let mut ready: Vec<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(c, _)| *c).collect();
        let mut visited = 0;
        while let Some(c) = ready.pop() {
            visited += 1;
            if let Some(entry) = self.classes.get(c) {
                for p in &entry.parents {
                    let d = indegree.get_mut(p.as_str()).expect("parent indexed");
                    *d -= 1;
                    if *d == 0 {
                        ready.push(p.as_str());
                    }
                }
            }
        }
        visited == indegree.len()
    }
}

/// DFS over the doc-internal edges. Edges into existing classes cannot close
/// a cycle because existing classes never point back into a new layer.
fn find_cycle(doc_classes: &BTreeMap<&str, &ClassDecl>) -> Option<String> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    fn visit<'a>(node: &'a str, doc: &BTreeMap<&'a str, &'a ClassDecl>, marks: &mut BTreeMap<&'a str, Mark>) -> Option<String> {
        match marks.get(node) {
            Some(Mark::Active) => return Some(node.to_string()),
            Some(Mark::Done) => return None,
            None => {}
        }
        marks.insert(node, Mark::Active);
        if let Some(decl) = doc.get(node) {
            for parent in &decl.parents {
                if doc.contains_key(parent.as_str()) {
                    if let Some(c) = visit(parent.as_str(), doc, marks) {
                        return Some(c);
                    }
                }
            }
        }
        marks.insert(node, Mark::Done);
        None
    }
    let mut marks = BTreeMap::new();
    doc_classes.keys().find_map(|name| visit(name, doc_classes, &mut marks))
}

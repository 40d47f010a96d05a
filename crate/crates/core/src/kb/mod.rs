//! The context knowledge base.
//!
//! Stores [`Fact`]s, answers [`Pattern`] queries and pushes
//! [`Notification`]s to subscribers. All mutations go through `&mut self`,
//! so a knowledge base is one serialized mutation stream; callers that share
//! it across threads wrap it in a mutex. Every mutation gets a sequence
//! number and is appended to the in-memory log and, when configured, to an
//! on-disk [journal](journal).

mod fact;
pub mod journal;
mod pattern;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::mpsc::Sender;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fact::{Fact, FactId, Number, SourceTag, Value, REASONER_PROVIDER};
pub use journal::{JournalOp, JournalRecord};
pub use pattern::{Binding, MalformedPattern, Pattern, Slot, Vars};

use crate::ontology::{Ontology, ValidationError};
use journal::JournalWriter;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    /// Facts failing ontology validation are rejected.
    #[default]
    Strict,
    /// Such facts are stored and flagged `unvalidated`.
    Lenient,
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("validation failed: {0}")]
    ValidationFailed(#[from] ValidationError),
    #[error("valid_from {from} is after valid_to {to}")]
    ClockSkew { from: String, to: String },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("source {tag} is inconsistent with provider `{provider}`")]
    ProvenanceMismatch { tag: SourceTag, provider: String },
    #[error("subject must be a non-empty identifier")]
    EmptySubject,
    #[error("unknown fact {0}")]
    UnknownFact(FactId),
    #[error(transparent)]
    MalformedPattern(#[from] MalformedPattern),
    #[error("journal: {0}")]
    Journal(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactFlags {
    /// Stored in lenient mode despite failing ontology validation.
    pub unvalidated: bool,
    /// Clashes with another fact on a functional predicate.
    pub conflict: bool,
    /// Lost a conflict resolution; still stored and queryable.
    pub shadowed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NotificationKind {
    Added,
    Retracted,
    Modified,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubId(pub u64);

/// A pushed change. For `Modified`, `previous` holds the replaced version and
/// `fact` the new one; either may be the one that matched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub sub_id: SubId,
    pub seq: u64,
    pub kind: NotificationKind,
    pub fact: Fact,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous: Option<Fact>,
}

/// Where notifications for a subscription go. A callback returning `false`
/// or a disconnected channel marks the consumer dead; dead subscriptions are
/// dropped on the spot.
pub enum Delivery {
    Callback(Box<dyn FnMut(&Notification) -> bool + Send>),
    Channel(Sender<Notification>),
}

impl Delivery {
    pub fn callback(f: impl FnMut(&Notification) -> bool + Send + 'static) -> Delivery {
        Delivery::Callback(Box::new(f))
    }

    fn deliver(&mut self, n: &Notification) -> bool {
        match self {
            Delivery::Callback(f) => f(n),
            Delivery::Channel(tx) => tx.send(n.clone()).is_ok(),
        }
    }
}

impl std::fmt::Debug for Delivery {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Delivery::Callback(_) => f.write_str("Delivery::Callback"),
            Delivery::Channel(_) => f.write_str("Delivery::Channel"),
        }
    }
}

#[derive(Debug)]
struct Subscription {
    pattern: Pattern,
    delivery: Delivery,
}

#[derive(Clone, Debug)]
struct Entry {
    fact: Fact,
    flags: FactFlags,
}

#[derive(Debug)]
pub struct KnowledgeBase {
    ontology: Arc<Ontology>,
    mode: ValidationMode,
    facts: BTreeMap<FactId, Entry>,
    next_id: u64,
    seq: u64,
    subscriptions: BTreeMap<SubId, Subscription>,
    next_sub: u64,
    journal: Option<JournalWriter>,
    log: Vec<JournalRecord>,
}

impl KnowledgeBase {
    pub fn new(ontology: Arc<Ontology>, mode: ValidationMode) -> Self {
        KnowledgeBase {
            ontology,
            mode,
            facts: BTreeMap::new(),
            next_id: 1,
            seq: 0,
            subscriptions: BTreeMap::new(),
            next_sub: 1,
            journal: None,
            log: Vec::new(),
        }
    }

    /// Appends every subsequent mutation to `path`.
    pub fn attach_journal(&mut self, path: &Path) -> Result<(), KbError> {
        self.journal = Some(JournalWriter::open(path)?);
        Ok(())
    }

    /// Rebuilds a knowledge base by replaying journal records from empty.
    /// Replayed facts are trusted: no validation and no notifications.
    pub fn replay(ontology: Arc<Ontology>, mode: ValidationMode, records: &[JournalRecord]) -> Self {
        let mut kb = KnowledgeBase::new(ontology, mode);
        for rec in records {
            kb.apply_record(rec);
        }
        kb
    }

    pub fn replay_file(ontology: Arc<Ontology>, mode: ValidationMode, path: &Path) -> Result<Self, KbError> {
        let file = std::fs::File::open(path)?;
        let records = journal::read_records(std::io::BufReader::new(file))?;
        Ok(KnowledgeBase::replay(ontology, mode, &records))
    }

    fn apply_record(&mut self, rec: &JournalRecord) {
        match &rec.op {
            JournalOp::Add { fact } => self.insert_raw(fact.clone()),
            JournalOp::Modify { id, fact } => {
                self.remove_raw(*id);
                self.insert_raw(fact.clone());
            }
            JournalOp::Delete { id } => {
                self.remove_raw(*id);
            }
        }
        self.seq = self.seq.max(rec.seq);
        self.log.push(rec.clone());
    }

    fn insert_raw(&mut self, fact: Fact) {
        let flags = FactFlags { unvalidated: self.ontology.validate_fact(&fact).is_err(), ..Default::default() };
        self.next_id = self.next_id.max(fact.fact_id.0 + 1);
        let (subject, predicate) = (fact.subject.clone(), fact.predicate.clone());
        self.facts.insert(fact.fact_id, Entry { fact, flags });
        self.refresh_conflicts(&subject, &predicate);
    }

    fn remove_raw(&mut self, id: FactId) -> Option<Fact> {
        let entry = self.facts.remove(&id)?;
        self.refresh_conflicts(&entry.fact.subject, &entry.fact.predicate);
        Some(entry.fact)
    }

    pub fn ontology(&self) -> &Arc<Ontology> {
        &self.ontology
    }

    pub fn mode(&self) -> ValidationMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn get(&self, id: FactId) -> Option<&Fact> {
        self.facts.get(&id).map(|e| &e.fact)
    }

    pub fn flags(&self, id: FactId) -> Option<FactFlags> {
        self.facts.get(&id).map(|e| e.flags)
    }

    /// All stored facts in id order.
    pub fn facts(&self) -> impl Iterator<Item = &Fact> {
        self.facts.values().map(|e| &e.fact)
    }

    pub fn snapshot(&self) -> Vec<Fact> {
        self.facts().cloned().collect()
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Every mutation applied so far, in order.
    pub fn log(&self) -> &[JournalRecord] {
        &self.log
    }

    /// Mutations with a sequence number greater than `seq`.
    pub fn log_since(&self, seq: u64) -> &[JournalRecord] {
        let start = self.log.partition_point(|r| r.seq <= seq);
        &self.log[start..]
    }

    pub fn set_shadowed(&mut self, id: FactId, shadowed: bool) {
        if let Some(e) = self.facts.get_mut(&id) {
            e.flags.shadowed = shadowed;
        }
    }

    /// Runs the structural and ontology checks `add_fact` would run.
    pub fn check(&self, fact: &Fact) -> Result<FactFlags, KbError> {
        if fact.subject.is_empty() {
            return Err(KbError::EmptySubject);
        }
        if !(0.0..=1.0).contains(&fact.confidence) {
            return Err(KbError::InvalidConfidence(fact.confidence));
        }
        if !fact.interval().is_well_formed() {
            return Err(KbError::ClockSkew {
                from: fact.valid_from.to_string(),
                to: fact.valid_to.map(|t| t.to_string()).unwrap_or_default(),
            });
        }
        if fact.source.is_derived() != fact.is_derived() {
            return Err(KbError::ProvenanceMismatch { tag: fact.source, provider: fact.provider.clone() });
        }
        let mut flags = FactFlags::default();
        if let Err(e) = self.ontology.validate_fact(fact) {
            match self.mode {
                ValidationMode::Strict => return Err(e.into()),
                ValidationMode::Lenient => flags.unvalidated = true,
            }
        }
        Ok(flags)
    }

    /// Stores a fact under a fresh id and notifies matching subscribers once.
    pub fn add_fact(&mut self, mut fact: Fact) -> Result<FactId, KbError> {
        let flags = self.check(&fact)?;
        let id = FactId(self.next_id);
        self.next_id += 1;
        fact.fact_id = id;
        let (subject, predicate) = (fact.subject.clone(), fact.predicate.clone());
        self.facts.insert(id, Entry { fact: fact.clone(), flags });
        self.refresh_conflicts(&subject, &predicate);
        let seq = self.record(JournalOp::Add { fact: fact.clone() })?;
        self.notify(seq, NotificationKind::Added, &fact, None);
        Ok(id)
    }

    /// Removes a fact; `false` when the id is unknown.
    pub fn delete_fact(&mut self, id: FactId) -> Result<bool, KbError> {
        let Some(fact) = self.remove_raw(id) else { return Ok(false) };
        let seq = self.record(JournalOp::Delete { id })?;
        self.notify(seq, NotificationKind::Retracted, &fact, None);
        Ok(true)
    }

    /// Atomically replaces a fact, returning the replacement's id. Replacing
    /// a fact with identical content is a no-op that keeps the old id and
    /// sends nothing.
    pub fn modify_fact(&mut self, id: FactId, mut new: Fact) -> Result<FactId, KbError> {
        let old = self.get(id).cloned().ok_or(KbError::UnknownFact(id))?;
        if new.same_content(&old) {
            return Ok(id);
        }
        let flags = self.check(&new)?;
        self.remove_raw(id);
        let new_id = FactId(self.next_id);
        self.next_id += 1;
        new.fact_id = new_id;
        let (subject, predicate) = (new.subject.clone(), new.predicate.clone());
        self.facts.insert(new_id, Entry { fact: new.clone(), flags });
        self.refresh_conflicts(&subject, &predicate);
        let seq = self.record(JournalOp::Modify { id, fact: new.clone() })?;
        self.notify(seq, NotificationKind::Modified, &new, Some(&old));
        Ok(new_id)
    }

    pub fn query(&self, pattern: &Pattern) -> Vec<Binding> {
        self.facts.values().filter_map(|e| pattern.matches(&e.fact).map(|vars| Binding { fact_id: e.fact.fact_id, vars })).collect()
    }

    /// Facts matching a pattern, in id order.
    pub fn matching(&self, pattern: &Pattern) -> Vec<&Fact> {
        self.facts().filter(|f| pattern.matches(f).is_some()).collect()
    }

    pub fn subscribe(&mut self, pattern: Pattern, delivery: Delivery) -> SubId {
        let id = SubId(self.next_sub);
        self.next_sub += 1;
        self.subscriptions.insert(id, Subscription { pattern, delivery });
        id
    }

    pub fn unsubscribe(&mut self, id: SubId) -> bool {
        self.subscriptions.remove(&id).is_some()
    }

    pub fn subscription_count(&self) -> usize {
        self.subscriptions.len()
    }

    /// Flushes and syncs the journal file, if any.
    pub fn flush(&mut self) -> Result<(), KbError> {
        if let Some(j) = &mut self.journal {
            j.flush()?;
        }
        Ok(())
    }

    fn record(&mut self, op: JournalOp) -> Result<u64, KbError> {
        self.seq += 1;
        let rec = JournalRecord { op, seq: self.seq };
        if let Some(j) = &mut self.journal {
            j.append(&rec)?;
        }
        self.log.push(rec);
        Ok(self.seq)
    }

    fn notify(&mut self, seq: u64, kind: NotificationKind, fact: &Fact, previous: Option<&Fact>) {
        let mut dead = Vec::new();
        for (id, sub) in self.subscriptions.iter_mut() {
            let hit = sub.pattern.matches(fact).is_some() || previous.is_some_and(|p| sub.pattern.matches(p).is_some());
            if !hit {
                continue;
            }
            let n = Notification { sub_id: *id, seq, kind, fact: fact.clone(), previous: previous.cloned() };
            if !sub.delivery.deliver(&n) {
                dead.push(*id);
            }
        }
        for id in dead {
            self.subscriptions.remove(&id);
        }
    }

    /// Recomputes the `conflict` flag for one (subject, predicate) group.
    fn refresh_conflicts(&mut self, subject: &str, predicate: &str) {
        let functional = self.ontology.is_functional(predicate);
        let group: Vec<FactId> =
            self.facts.values().filter(|e| e.fact.subject == subject && e.fact.predicate == predicate).map(|e| e.fact.fact_id).collect();
        let mut clashing = BTreeSet::new();
        if functional {
            for (i, a) in group.iter().enumerate() {
                for b in &group[i + 1..] {
                    let (fa, fb) = (&self.facts[a].fact, &self.facts[b].fact);
                    if fa.object != fb.object && fa.interval().overlaps(&fb.interval()) {
                        clashing.insert(*a);
                        clashing.insert(*b);
                    }
                }
            }
        }
        for id in group {
            if let Some(e) = self.facts.get_mut(&id) {
                e.flags.conflict = clashing.contains(&id);
            }
        }
    }

    /// Ids of facts currently flagged as clashing on a functional predicate.
    pub fn flagged_conflicts(&self) -> Vec<FactId> {
        self.facts.values().filter(|e| e.flags.conflict).map(|e| e.fact.fact_id).collect()
    }

    pub fn parse_and_query(&self, pattern: &str) -> Result<Vec<Binding>, KbError> {
        Ok(self.query(&Pattern::parse(pattern)?))
    }
}

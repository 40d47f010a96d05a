//! Rule-based inference, conflict handling and truth maintenance.
//!
//! [`infer`] is the pure entry point: it computes the least fixpoint of the
//! inference rules over a snapshot. [`Reasoner`] keeps that fixpoint live
//! against a [`KnowledgeBase`], writing derived facts back with provider
//! `reasoner` and retracting them when their support disappears.

mod conflict;
mod engine;
mod rule;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conflict::{detect_conflicts, rank, resolve_conflict, Conflict, Lineage, NoLineage, Resolution, ResolutionPath};
pub use engine::{Engine, Node, NodeId, Support, Tuple};
pub use rule::{Atom, Rule, RuleKind, RuleSet};

use crate::kb::{Fact, FactId, KnowledgeBase, SourceTag, Value, REASONER_PROVIDER};
use crate::time::Timestamp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasonerError {
    #[error("rule {rule}: {reason}")]
    RuleValidation { rule: String, reason: String },
    #[error("rules file: {0}")]
    RulesFile(String),
    #[error("inference did not reach a fixpoint within {rounds} rounds")]
    NonTermination { rounds: usize },
    #[error("a conflict needs at least two distinct contenders")]
    EmptyConflict,
    #[error("knowledge base: {0}")]
    Kb(String),
}

/// One rule instance that produced a derived fact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Derivation {
    pub derived_fact: Fact,
    pub rule_id: String,
    pub premise_ids: Vec<FactId>,
    pub assigned_source: SourceTag,
    pub confidence: f64,
}

/// Least fixpoint of the inference rules over the non-derived facts of
/// `snapshot`, one [`Derivation`] per rule instance.
///
/// Facts without an id get one after the largest id present. Derived facts
/// get provisional ids after those, in discovery order, so premise lists can
/// refer to them.
pub fn infer(snapshot: &[Fact], rules: &RuleSet) -> Result<Vec<Derivation>, ReasonerError> {
    let mut engine = Engine::new(rules);
    let base = with_ids(snapshot);
    engine.add_base(&base)?;
    engine.recompute();
    let first = base.iter().map(|f| f.fact_id.0).max().unwrap_or(0) + 1;
    let ids: BTreeMap<_, _> = engine.derived().zip(first..).map(|((n, _), id)| (n, FactId(id))).collect();
    Ok(engine.derived().flat_map(|(n, _)| derivations_of(&engine, n, &ids)).collect())
}

fn with_ids(snapshot: &[Fact]) -> Vec<Fact> {
    let mut next = snapshot.iter().map(|f| f.fact_id.0).max().unwrap_or(0) + 1;
    let mut seen = BTreeSet::new();
    snapshot
        .iter()
        .filter(|f| !f.is_derived())
        .map(|f| {
            let mut f = f.clone();
            if !f.fact_id.is_assigned() || !seen.insert(f.fact_id) {
                f.fact_id = FactId(next);
                seen.insert(f.fact_id);
                next += 1;
            }
            f
        })
        .collect()
}

fn node_fact(engine: &Engine, n: NodeId, id: FactId) -> Fact {
    let node = engine.node(n);
    Fact {
        fact_id: id,
        subject: node.tuple.subject.clone(),
        predicate: node.tuple.predicate.clone(),
        object: node.tuple.object.clone(),
        valid_from: node.tuple.interval.from,
        valid_to: node.tuple.interval.to,
        source: if node.scheduled { SourceTag::Scheduled } else { SourceTag::Deduced },
        confidence: node.confidence,
        provider: REASONER_PROVIDER.to_string(),
    }
}

fn fact_id_of(engine: &Engine, n: NodeId, derived: &BTreeMap<NodeId, FactId>) -> FactId {
    match engine.node(n).best_base() {
        Some(b) => b.id,
        None => derived.get(&n).copied().unwrap_or(FactId::UNASSIGNED),
    }
}

fn derivations_of(engine: &Engine, n: NodeId, ids: &BTreeMap<NodeId, FactId>) -> Vec<Derivation> {
    let fact = node_fact(engine, n, ids.get(&n).copied().unwrap_or(FactId::UNASSIGNED));
    engine
        .node(n)
        .supports
        .iter()
        .map(|s| {
            let (confidence, assigned_source) = engine.support_value(s);
            Derivation {
                derived_fact: fact.clone(),
                rule_id: engine.rules()[s.rule].id.clone(),
                premise_ids: s.premises.iter().map(|&p| fact_id_of(engine, p, ids)).collect(),
                assigned_source,
                confidence,
            }
        })
        .collect()
}

/// What one reasoning cycle changed in the KB.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    /// Derivations behind derived facts added or updated in this cycle.
    pub derivations: Vec<Derivation>,
    pub added: Vec<FactId>,
    pub retracted: Vec<FactId>,
    /// `(old id, new id)` for derived facts whose confidence or source changed.
    pub updated: Vec<(FactId, FactId)>,
    pub resolutions: Vec<Resolution>,
    /// Derived facts the KB refused, rendered as text.
    pub errors: Vec<String>,
}

impl CycleReport {
    pub fn is_quiet(&self) -> bool {
        self.added.is_empty() && self.retracted.is_empty() && self.updated.is_empty()
    }
}

/// The canonical value of the activity predicate for a subject at an instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurrentActivity {
    pub object: Value,
    pub confidence: f64,
    pub source: SourceTag,
    pub fact_id: FactId,
}

pub const DEFAULT_ACTIVITY_PREDICATE: &str = "Activity";

type MergeKey = (usize, Vec<NodeId>, Tuple);

const MERGE_PASSES: usize = 4;

/// Keeps a KB closed under a rule set.
#[derive(Debug)]
pub struct Reasoner {
    rules: RuleSet,
    engine: Engine,
    activity_predicate: String,
    written: BTreeMap<NodeId, FactId>,
    written_rev: BTreeMap<FactId, NodeId>,
    merges: BTreeSet<MergeKey>,
}

impl Reasoner {
    pub fn new(rules: RuleSet) -> Reasoner {
        Reasoner {
            engine: Engine::new(&rules),
            rules,
            activity_predicate: DEFAULT_ACTIVITY_PREDICATE.to_string(),
            written: BTreeMap::new(),
            written_rev: BTreeMap::new(),
            merges: BTreeSet::new(),
        }
    }

    pub fn with_activity_predicate(mut self, predicate: &str) -> Reasoner {
        self.activity_predicate = predicate.to_string();
        self
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn activity_predicate(&self) -> &str {
        &self.activity_predicate
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    /// Brings derived facts, merges and shadow flags in line with the KB's
    /// current base facts.
    pub fn run(&mut self, kb: &mut KnowledgeBase) -> Result<CycleReport, ReasonerError> {
        let mut report = CycleReport::default();
        let current: BTreeMap<FactId, &Fact> = kb.facts().filter(|f| !f.is_derived()).map(|f| (f.fact_id, f)).collect();
        let gone: Vec<FactId> = self.engine.base_ids().filter(|id| !current.contains_key(id)).collect();
        let fresh: Vec<Fact> =
            current.iter().filter(|(id, _)| self.engine.node_of_base(**id).is_none()).map(|(_, f)| (*f).clone()).collect();
        for id in gone {
            self.engine.remove_base(id);
        }
        self.engine.add_base(&fresh)?;

        for pass in 0.. {
            self.engine.recompute();
            self.write(kb, &mut report);
            if pass + 1 == MERGE_PASSES {
                break;
            }
            let desired = self.desired_merges(kb)?;
            if desired == self.merges {
                break;
            }
            for (rule, premises, tuple) in self.merges.difference(&desired) {
                self.engine.remove_external(*rule, premises, tuple);
            }
            for (rule, premises, tuple) in desired.difference(&self.merges) {
                if premises.iter().all(|&p| self.engine.get(p).is_some()) {
                    self.engine.add_external(*rule, premises.clone(), tuple.clone())?;
                }
            }
            self.merges = desired;
        }

        // Whatever derived facts were not adopted have no support left.
        let unsupported: Vec<FactId> = self.orphans(kb).map(|f| f.fact_id).collect();
        for id in unsupported {
            if kb.delete_fact(id).unwrap_or(false) {
                report.retracted.push(id);
            }
        }

        let ontology = kb.ontology().clone();
        let conflicts = detect_conflicts(kb.facts(), |p| ontology.is_functional(p));
        let mut shadowed = BTreeSet::new();
        for c in &conflicts {
            let r = resolve_conflict(c, &self.rules, self)?;
            shadowed.extend(r.shadowed.iter().copied());
            report.resolutions.push(r);
        }
        let ids: Vec<FactId> = kb.facts().map(|f| f.fact_id).collect();
        for id in ids {
            kb.set_shadowed(id, shadowed.contains(&id));
        }
        Ok(report)
    }

    /// Deletes `removed` if it is still stored and runs a cycle, returning
    /// the derived facts that lost all support.
    pub fn retract_derivations(&mut self, kb: &mut KnowledgeBase, removed: FactId) -> Result<Vec<FactId>, ReasonerError> {
        if kb.get(removed).is_some_and(|f| !f.is_derived()) {
            kb.delete_fact(removed).map_err(|e| ReasonerError::Kb(e.to_string()))?;
        }
        Ok(self.run(kb)?.retracted)
    }

    /// Canonical activity of `subject` at `at`, resolving any conflict among
    /// the activity facts covering `at`.
    pub fn current_activity(&self, kb: &KnowledgeBase, subject: &str, at: Timestamp) -> Option<CurrentActivity> {
        let facts: Vec<Fact> = kb
            .facts()
            .filter(|f| f.subject == subject && f.predicate == self.activity_predicate && f.interval().contains(at))
            .cloned()
            .collect();
        let best = match Conflict::new(facts.clone()) {
            Ok(c) => resolve_conflict(&c, &self.rules, self).ok()?.canonical,
            Err(_) => facts.into_iter().min_by(rank)?,
        };
        Some(CurrentActivity { object: best.object, confidence: best.confidence, source: best.source, fact_id: best.fact_id })
    }

    /// Derivations behind a stored derived fact.
    pub fn derivations_for(&self, id: FactId) -> Vec<Derivation> {
        match self.written_rev.get(&id) {
            Some(&n) if self.engine.get(n).is_some() => derivations_of(&self.engine, n, &self.written),
            _ => Vec::new(),
        }
    }

    fn node_of_fact(&self, id: FactId) -> Option<NodeId> {
        self.engine.node_of_base(id).or_else(|| self.written_rev.get(&id).copied())
    }

    fn write(&mut self, kb: &mut KnowledgeBase, report: &mut CycleReport) {
        let stale: Vec<(NodeId, FactId)> = self
            .written
            .iter()
            .filter(|(n, _)| self.engine.get(**n).is_none_or(|node| !node.is_derived_only()))
            .map(|(n, id)| (*n, *id))
            .collect();
        for (n, id) in stale {
            self.written.remove(&n);
            self.written_rev.remove(&id);
            if kb.delete_fact(id).unwrap_or(false) {
                report.retracted.push(id);
            }
        }
        // Derived facts this reasoner did not write, e.g. replayed from a journal.
        let mut orphans: BTreeMap<Tuple, FactId> = self.orphans(kb).map(|f| (Tuple::of(f), f.fact_id)).collect();
        let nodes: Vec<NodeId> = self.engine.derived().map(|(n, _)| n).collect();
        let mut touched = Vec::new();
        for n in nodes {
            let fact = node_fact(&self.engine, n, FactId::UNASSIGNED);
            let stored = self.written.get(&n).copied().filter(|id| kb.get(*id).is_some());
            let outcome = match stored.or_else(|| orphans.remove(&Tuple::of(&fact))) {
                Some(id) if kb.get(id).is_some_and(|f| f.same_content(&fact)) => {
                    self.written.insert(n, id);
                    self.written_rev.insert(id, n);
                    continue;
                }
                Some(id) => kb.modify_fact(id, fact).inspect(|&new| {
                    report.updated.push((id, new));
                    self.written_rev.remove(&id);
                }),
                None => kb.add_fact(fact).inspect(|&new| {
                    report.added.push(new);
                }),
            };
            match outcome {
                Ok(id) => {
                    self.written.insert(n, id);
                    self.written_rev.insert(id, n);
                    touched.push(n);
                }
                Err(e) => {
                    if let Some(old) = self.written.remove(&n) {
                        self.written_rev.remove(&old);
                    }
                    report.errors.push(format!("{}: {e}", node_fact(&self.engine, n, FactId::UNASSIGNED)));
                }
            }
        }
        for n in touched {
            report.derivations.extend(derivations_of(&self.engine, n, &self.written));
        }
    }

    fn orphans<'a>(&'a self, kb: &'a KnowledgeBase) -> impl Iterator<Item = &'a Fact> {
        kb.facts().filter(|f| f.is_derived() && !self.written_rev.contains_key(&f.fact_id))
    }

    /// Merges called for by conflicts among facts that do not themselves
    /// rest on a merge.
    fn desired_merges(&self, kb: &KnowledgeBase) -> Result<BTreeSet<MergeKey>, ReasonerError> {
        let clean: Vec<&Fact> =
            kb.facts().filter(|f| self.node_of_fact(f.fact_id).and_then(|n| self.engine.get(n)).is_some_and(|n| n.clean)).collect();
        let ontology = kb.ontology();
        let mut out = BTreeSet::new();
        for c in detect_conflicts(clean, |p| ontology.is_functional(p)) {
            let r = resolve_conflict(&c, &self.rules, self)?;
            let ResolutionPath::Merge { rule_id } = &r.path else { continue };
            let rule = self.rules.rules().iter().position(|x| &x.id == rule_id).expect("rule exists");
            let premises: Option<Vec<NodeId>> = r.merged_from.iter().map(|id| self.node_of_fact(*id)).collect();
            if let Some(premises) = premises {
                out.insert((rule, premises, Tuple::of(&r.canonical)));
            }
        }
        Ok(out)
    }
}

impl Lineage for Reasoner {
    fn depends_on(&self, consequent: FactId, premise: FactId) -> bool {
        match (self.node_of_fact(consequent), self.node_of_fact(premise)) {
            (Some(c), Some(p)) => c != p && self.engine.depends_on(c, p),
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests;

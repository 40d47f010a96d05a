use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::rule::{RuleKind, RuleSet};
use super::ReasonerError;
use crate::kb::{Fact, FactId, Slot, SourceTag, Value, REASONER_PROVIDER};
use crate::time::{Interval, Timestamp};

/// Facts of one functional (subject, predicate) group that hold at a common
/// instant with at least two distinct objects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub subject: String,
    pub predicate: String,
    /// Sorted by id.
    pub contenders: Vec<Fact>,
}

impl Conflict {
    pub fn new(mut contenders: Vec<Fact>) -> Result<Conflict, ReasonerError> {
        contenders.sort_by_key(|f| f.fact_id);
        contenders.dedup_by_key(|f| f.fact_id);
        let objects: BTreeSet<&Value> = contenders.iter().map(|f| &f.object).collect();
        let first = contenders.first().ok_or(ReasonerError::EmptyConflict)?;
        if objects.len() < 2 {
            return Err(ReasonerError::EmptyConflict);
        }
        let (subject, predicate) = (first.subject.clone(), first.predicate.clone());
        if contenders.iter().any(|f| f.subject != subject || f.predicate != predicate) {
            return Err(ReasonerError::EmptyConflict);
        }
        Ok(Conflict { subject, predicate, contenders })
    }

    pub fn ids(&self) -> Vec<FactId> {
        self.contenders.iter().map(|f| f.fact_id).collect()
    }

    pub fn objects(&self) -> BTreeSet<&Value> {
        self.contenders.iter().map(|f| &f.object).collect()
    }
}

/// Maximal conflicts among facts whose predicate satisfies `functional`.
/// Intervals are one-dimensional, so pairwise-overlapping facts share an
/// instant and every maximal conflict is the active set at some `valid_from`.
pub fn detect_conflicts<'a>(facts: impl IntoIterator<Item = &'a Fact>, functional: impl Fn(&str) -> bool) -> Vec<Conflict> {
    let mut groups: BTreeMap<(&str, &str), Vec<&Fact>> = BTreeMap::new();
    for f in facts {
        if functional(&f.predicate) && !f.interval().is_empty() {
            groups.entry((&f.subject, &f.predicate)).or_default().push(f);
        }
    }
    let mut out = Vec::new();
    for group in groups.values() {
        let starts: BTreeSet<Timestamp> = group.iter().map(|f| f.valid_from).collect();
        let mut sets: Vec<BTreeSet<FactId>> = Vec::new();
        for t in starts {
            let active: BTreeSet<FactId> = group.iter().filter(|f| f.interval().contains(t)).map(|f| f.fact_id).collect();
            let objects: BTreeSet<&Value> = group.iter().filter(|f| active.contains(&f.fact_id)).map(|f| &f.object).collect();
            if objects.len() >= 2 && !sets.contains(&active) {
                sets.push(active);
            }
        }
        let maximal: Vec<&BTreeSet<FactId>> = sets.iter().filter(|s| !sets.iter().any(|o| o != *s && s.is_subset(o))).collect();
        for set in maximal {
            let contenders = group.iter().filter(|f| set.contains(&f.fact_id)).map(|f| (*f).clone()).collect();
            out.push(Conflict::new(contenders).expect("checked above"));
        }
    }
    out
}

/// Answers "is `premise` a transitive premise of `consequent`?" for facts in
/// the KB. Resolution uses it to let a fact that was derived from another
/// contender supersede it.
pub trait Lineage {
    fn depends_on(&self, consequent: FactId, premise: FactId) -> bool;
}

/// No fact depends on any other.
pub struct NoLineage;

impl Lineage for NoLineage {
    fn depends_on(&self, _: FactId, _: FactId) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "path", rename_all = "snake_case")]
pub enum ResolutionPath {
    Merge { rule_id: String },
    Ranking,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub subject: String,
    pub predicate: String,
    pub contenders: Vec<FactId>,
    /// Contenders dropped because another contender was derived from them.
    pub superseded: Vec<FactId>,
    pub path: ResolutionPath,
    /// The winning contender, or the merged fact (unassigned id until stored).
    pub canonical: Fact,
    /// For merges, the contender chosen for each merged object.
    pub merged_from: Vec<FactId>,
    /// Contenders that lost, to be flagged shadowed.
    pub shadowed: Vec<FactId>,
}

/// Ranking order: higher confidence, then source precedence, then later
/// `valid_from`, then lower id. `Less` means `a` wins.
pub fn rank(a: &Fact, b: &Fact) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.source.precedence().cmp(&b.source.precedence()))
        .then(b.valid_from.cmp(&a.valid_from))
        .then(a.fact_id.cmp(&b.fact_id))
}

/// Resolves a conflict: drop superseded contenders, then apply the first
/// merge rule whose object set equals the survivors' exactly, else rank.
pub fn resolve_conflict(c: &Conflict, rules: &RuleSet, lineage: &dyn Lineage) -> Result<Resolution, ReasonerError> {
    if c.objects().len() < 2 {
        return Err(ReasonerError::EmptyConflict);
    }
    let superseded: Vec<FactId> = c
        .contenders
        .iter()
        .filter(|f| c.contenders.iter().any(|g| g.fact_id != f.fact_id && g.object != f.object && lineage.depends_on(g.fact_id, f.fact_id)))
        .map(|f| f.fact_id)
        .collect();
    let survivors: Vec<&Fact> = c.contenders.iter().filter(|f| !superseded.contains(&f.fact_id)).collect();
    let survivors: Vec<&Fact> = if survivors.is_empty() { c.contenders.iter().collect() } else { survivors };
    let objects: BTreeSet<&Value> = survivors.iter().map(|f| &f.object).collect();

    let mut resolution = Resolution {
        subject: c.subject.clone(),
        predicate: c.predicate.clone(),
        contenders: c.ids(),
        superseded: superseded.clone(),
        path: ResolutionPath::Ranking,
        canonical: survivors[0].clone(),
        merged_from: Vec::new(),
        shadowed: Vec::new(),
    };

    if objects.len() >= 2 {
        if let Some((rule, merged)) = merge_for(c, &survivors, &objects, rules) {
            resolution.path = ResolutionPath::Merge { rule_id: rule };
            resolution.merged_from = merged.iter().map(|f| f.fact_id).collect();
            resolution.canonical = merged_fact(c, &merged, rules, &resolution.path);
            return Ok(resolution);
        }
    }
    let winner = survivors.iter().copied().min_by(|a, b| rank(a, b)).expect("non-empty");
    resolution.canonical = winner.clone();
    resolution.shadowed = c.ids().into_iter().filter(|id| *id != winner.fact_id).collect();
    Ok(resolution)
}

fn merge_for<'f>(c: &Conflict, survivors: &[&'f Fact], objects: &BTreeSet<&Value>, rules: &RuleSet) -> Option<(String, Vec<&'f Fact>)> {
    let rule = rules.merges().find(|r| {
        r.consequent.predicate == c.predicate
            && match &r.consequent.subject {
                Slot::Const(Value::Ident(s)) => *s == c.subject,
                _ => true,
            }
            && r.merge_objects() == *objects
    })?;
    // One contender per object, the best by rank, in the rule's antecedent order.
    let merged = rule
        .antecedents
        .iter()
        .filter_map(|a| match &a.object {
            Slot::Const(v) => survivors.iter().copied().filter(|f| f.object == *v).min_by(|a, b| rank(a, b)),
            _ => None,
        })
        .collect();
    Some((rule.id.clone(), merged))
}

fn merged_fact(c: &Conflict, merged: &[&Fact], rules: &RuleSet, path: &ResolutionPath) -> Fact {
    let ResolutionPath::Merge { rule_id } = path else { unreachable!("merge path") };
    let rule = rules.get(rule_id).expect("rule exists");
    debug_assert_eq!(rule.kind, RuleKind::ConflictResolution);
    let interval = merged
        .iter()
        .map(|f| f.interval())
        .try_fold(None::<Interval>, |acc, iv| match acc {
            None => Some(Some(iv)),
            Some(a) => a.intersect(&iv).map(Some),
        })
        .flatten()
        .unwrap_or_else(|| merged[0].interval());
    let min = merged.iter().map(|f| f.confidence).fold(f64::INFINITY, f64::min);
    let scheduled = merged.iter().all(|f| matches!(f.source, SourceTag::Defined | SourceTag::Scheduled));
    let object = match &rule.consequent.object {
        Slot::Const(v) => v.clone(),
        _ => unreachable!("validated merge rules have constant objects"),
    };
    Fact {
        fact_id: FactId::UNASSIGNED,
        subject: c.subject.clone(),
        predicate: c.predicate.clone(),
        object,
        valid_from: interval.from,
        valid_to: interval.to,
        source: if scheduled { SourceTag::Scheduled } else { SourceTag::Deduced },
        confidence: rule.factor * min,
        provider: REASONER_PROVIDER.to_string(),
    }
}

//! Forward-chaining closure with truth maintenance.
//!
//! Every distinct ground tuple `(subject, predicate, object, interval)` is one
//! node. A node is justified by base facts and/or supports, where a support is
//! one rule instance naming its premise nodes. Saturation is semi-naive.
//! Retraction over-deletes the dependents cone and rederives from the
//! supports that survive, so the closure after a removal equals the closure
//! recomputed from scratch.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::rule::{Atom, Rule, RuleKind, RuleSet};
use super::ReasonerError;
use crate::kb::{Fact, FactId, Slot, SourceTag, Value, Vars};
use crate::time::Interval;

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tuple {
    pub subject: String,
    pub predicate: String,
    pub object: Value,
    pub interval: Interval,
}

impl Tuple {
    pub fn of(f: &Fact) -> Tuple {
        Tuple { subject: f.subject.clone(), predicate: f.predicate.clone(), object: f.object.clone(), interval: f.interval() }
    }
}

/// One rule instance: premises are in antecedent order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Support {
    pub rule: usize,
    pub premises: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct BaseEntry {
    pub id: FactId,
    pub source: SourceTag,
    pub confidence: f64,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub tuple: Tuple,
    pub base: Vec<BaseEntry>,
    pub supports: BTreeSet<Support>,
    /// Best confidence over base facts and supports.
    pub confidence: f64,
    /// Reachable from Defined base facts alone.
    pub scheduled: bool,
    /// Reachable without merge supports.
    pub clean: bool,
}

impl Node {
    pub fn is_derived_only(&self) -> bool {
        self.base.is_empty()
    }

    /// The base fact standing for this node: highest confidence, then lowest id.
    pub fn best_base(&self) -> Option<&BaseEntry> {
        self.base.iter().max_by(|a, b| a.confidence.total_cmp(&b.confidence).then(b.id.cmp(&a.id)))
    }
}

#[derive(Debug)]
pub struct Engine {
    rules: Vec<Rule>,
    nodes: Vec<Option<Node>>,
    by_key: HashMap<Tuple, NodeId>,
    by_pred: HashMap<String, BTreeSet<NodeId>>,
    dependents: HashMap<NodeId, BTreeSet<NodeId>>,
    base_index: BTreeMap<FactId, NodeId>,
    round_limit: Option<usize>,
    rounds: usize,
}

impl Engine {
    pub fn new(rules: &RuleSet) -> Engine {
        Engine {
            rules: rules.rules().to_vec(),
            nodes: Vec::new(),
            by_key: HashMap::new(),
            by_pred: HashMap::new(),
            dependents: HashMap::new(),
            base_index: BTreeMap::new(),
            round_limit: None,
            rounds: 0,
        }
    }

    /// Overrides the round guard, which otherwise is `|rules| * |tuples|^2`.
    pub fn with_round_limit(mut self, limit: usize) -> Engine {
        self.round_limit = Some(limit);
        self
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Rounds used by the last saturation.
    pub fn last_rounds(&self) -> usize {
        self.rounds
    }

    pub fn node(&self, id: NodeId) -> &Node {
        self.nodes[id].as_ref().expect("live node")
    }

    pub fn get(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id).and_then(Option::as_ref)
    }

    pub fn node_of(&self, tuple: &Tuple) -> Option<NodeId> {
        self.by_key.get(tuple).copied()
    }

    pub fn node_of_base(&self, id: FactId) -> Option<NodeId> {
        self.base_index.get(&id).copied()
    }

    pub fn base_ids(&self) -> impl Iterator<Item = FactId> + '_ {
        self.base_index.keys().copied()
    }

    pub fn live(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| n.as_ref().map(|n| (i, n)))
    }

    /// Nodes justified only by rules, in creation order.
    pub fn derived(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.live().filter(|(_, n)| n.is_derived_only())
    }

    pub fn is_merge_rule(&self, rule: usize) -> bool {
        self.rules[rule].kind == RuleKind::ConflictResolution
    }

    /// Adds base facts and saturates. Facts must carry distinct ids.
    pub fn add_base(&mut self, facts: &[Fact]) -> Result<(), ReasonerError> {
        let mut delta = BTreeSet::new();
        for f in facts {
            let entry = BaseEntry { id: f.fact_id, source: f.source, confidence: f.confidence };
            let (node, fresh) = self.intern(Tuple::of(f));
            self.nodes[node].as_mut().expect("interned").base.push(entry);
            self.base_index.insert(f.fact_id, node);
            if fresh {
                delta.insert(node);
            }
        }
        self.saturate(delta)
    }

    /// Removes one base fact and everything that loses its justification.
    pub fn remove_base(&mut self, id: FactId) -> bool {
        let Some(node) = self.base_index.remove(&id) else { return false };
        let n = self.nodes[node].as_mut().expect("indexed node is live");
        n.base.retain(|b| b.id != id);
        if n.base.is_empty() {
            self.retract_from(node);
        }
        true
    }

    /// Attaches a support computed outside saturation (a merge) and saturates.
    pub fn add_external(&mut self, rule: usize, premises: Vec<NodeId>, tuple: Tuple) -> Result<NodeId, ReasonerError> {
        let node = self.attach(tuple, Support { rule, premises });
        let delta = node.1.then_some(node.0).into_iter().collect();
        self.saturate(delta)?;
        Ok(node.0)
    }

    pub fn remove_external(&mut self, rule: usize, premises: &[NodeId], tuple: &Tuple) {
        let Some(node) = self.node_of(tuple) else { return };
        let support = Support { rule, premises: premises.to_vec() };
        if !self.nodes[node].as_mut().expect("live").supports.remove(&support) {
            return;
        }
        self.unlink(node, &support);
        if self.node(node).base.is_empty() {
            self.retract_from(node);
        }
    }

    /// True when `premise` is among the transitive premises of `node`.
    pub fn depends_on(&self, node: NodeId, premise: NodeId) -> bool {
        let mut stack = vec![node];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            for s in &self.node(n).supports {
                for &p in &s.premises {
                    if p == premise {
                        return true;
                    }
                    if seen.insert(p) {
                        stack.push(p);
                    }
                }
            }
        }
        false
    }

    /// Recomputes confidence, the scheduled mark and the clean mark of every
    /// live node as least fixpoints over base facts and supports.
    pub fn recompute(&mut self) {
        let ids: Vec<NodeId> = self.live().map(|(i, _)| i).collect();
        let mut conf: HashMap<NodeId, f64> = HashMap::new();
        let mut sched: BTreeSet<NodeId> = BTreeSet::new();
        let mut clean: BTreeSet<NodeId> = BTreeSet::new();
        for &i in &ids {
            let n = self.node(i);
            let best = n.base.iter().map(|b| b.confidence).fold(f64::NEG_INFINITY, f64::max);
            conf.insert(i, best);
            if n.base.iter().any(|b| b.source == SourceTag::Defined) {
                sched.insert(i);
            }
            if !n.base.is_empty() {
                clean.insert(i);
            }
        }
        for _ in 0..=ids.len() {
            let mut changed = false;
            for &i in &ids {
                for s in &self.node(i).supports {
                    let m = s.premises.iter().map(|p| conf[p]).fold(f64::INFINITY, f64::min);
                    if m.is_finite() {
                        let c = self.rules[s.rule].factor * m;
                        if c > conf[&i] {
                            conf.insert(i, c);
                            changed = true;
                        }
                    }
                    if !sched.contains(&i) && s.premises.iter().all(|p| sched.contains(p)) {
                        sched.insert(i);
                        changed = true;
                    }
                    if !clean.contains(&i) && !self.is_merge_rule(s.rule) && s.premises.iter().all(|p| clean.contains(p)) {
                        clean.insert(i);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for i in ids {
            let n = self.nodes[i].as_mut().expect("live");
            n.confidence = conf[&i];
            n.scheduled = sched.contains(&i);
            n.clean = clean.contains(&i);
        }
    }

    /// Confidence and source one support lends its node. Valid after `recompute`.
    pub fn support_value(&self, s: &Support) -> (f64, SourceTag) {
        let m = s.premises.iter().map(|&p| self.node(p).confidence).fold(f64::INFINITY, f64::min);
        let scheduled = s.premises.iter().all(|&p| self.node(p).scheduled);
        (self.rules[s.rule].factor * m, if scheduled { SourceTag::Scheduled } else { SourceTag::Deduced })
    }

    fn round_guard(&self) -> usize {
        self.round_limit.unwrap_or_else(|| {
            let n = self.by_key.len().max(1);
            self.rules.len().max(1).saturating_mul(n.saturating_mul(n)).saturating_add(1)
        })
    }

    fn saturate(&mut self, mut delta: BTreeSet<NodeId>) -> Result<(), ReasonerError> {
        self.rounds = 0;
        while !delta.is_empty() {
            self.rounds += 1;
            if self.rounds > self.round_guard() {
                return Err(ReasonerError::NonTermination { rounds: self.rounds });
            }
            let mut found = Vec::new();
            for (ri, rule) in self.rules.iter().enumerate() {
                if rule.kind != RuleKind::Inference {
                    continue;
                }
                for first in 0..rule.antecedents.len() {
                    let mut order = vec![first];
                    order.extend((0..rule.antecedents.len()).filter(|&k| k != first));
                    let mut premises = vec![0; rule.antecedents.len()];
                    self.join(ri, &order, 0, &delta, Vars::new(), None, &mut premises, &mut found);
                }
            }
            let mut next = BTreeSet::new();
            for (tuple, support) in found {
                let (node, fresh) = self.attach(tuple, support);
                if fresh {
                    next.insert(node);
                }
            }
            delta = next;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn join(
        &self,
        ri: usize,
        order: &[usize],
        depth: usize,
        delta: &BTreeSet<NodeId>,
        vars: Vars,
        interval: Option<Interval>,
        premises: &mut Vec<NodeId>,
        out: &mut Vec<(Tuple, Support)>,
    ) {
        let rule = &self.rules[ri];
        if depth == order.len() {
            let interval = interval.expect("at least one antecedent");
            let (Some(Value::Ident(subject)), Some(object)) =
                (instantiate(&rule.consequent.subject, &vars), instantiate(&rule.consequent.object, &vars))
            else {
                return;
            };
            let tuple = Tuple { subject, predicate: rule.consequent.predicate.clone(), object, interval };
            out.push((tuple, Support { rule: ri, premises: premises.clone() }));
            return;
        }
        let k = order[depth];
        let atom = &rule.antecedents[k];
        let Some(candidates) = self.by_pred.get(&atom.predicate) else { return };
        let pick = |id: &NodeId| depth > 0 || delta.contains(id);
        for &id in candidates.iter().filter(|id| pick(id)) {
            let t = &self.node(id).tuple;
            let Some(vars) = unify(atom, t, &vars) else { continue };
            let iv = match interval {
                None => Some(t.interval),
                Some(iv) => iv.intersect(&t.interval),
            };
            if iv.is_none() {
                continue;
            }
            premises[k] = id;
            self.join(ri, order, depth + 1, delta, vars, iv, premises, out);
        }
    }

    fn intern(&mut self, tuple: Tuple) -> (NodeId, bool) {
        if let Some(&id) = self.by_key.get(&tuple) {
            return (id, false);
        }
        let id = self.nodes.len();
        self.by_pred.entry(tuple.predicate.clone()).or_default().insert(id);
        self.by_key.insert(tuple.clone(), id);
        self.nodes.push(Some(Node {
            tuple,
            base: Vec::new(),
            supports: BTreeSet::new(),
            confidence: f64::NEG_INFINITY,
            scheduled: false,
            clean: false,
        }));
        (id, true)
    }

    fn attach(&mut self, tuple: Tuple, support: Support) -> (NodeId, bool) {
        let (id, fresh) = self.intern(tuple);
        for &p in &support.premises {
            self.dependents.entry(p).or_default().insert(id);
        }
        self.nodes[id].as_mut().expect("interned").supports.insert(support);
        (id, fresh)
    }

    /// Drops dependency edges a removed support no longer needs.
    fn unlink(&mut self, node: NodeId, removed: &Support) {
        for p in &removed.premises {
            let still = self.node(node).supports.iter().any(|s| s.premises.contains(p));
            if !still {
                if let Some(d) = self.dependents.get_mut(p) {
                    d.remove(&node);
                }
            }
        }
    }

    fn retract_from(&mut self, start: NodeId) {
        let mut cone = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            for &d in self.dependents.get(&n).into_iter().flatten() {
                if cone.insert(d) {
                    stack.push(d);
                }
            }
        }
        let mut alive: BTreeSet<NodeId> = cone.iter().copied().filter(|&c| !self.node(c).base.is_empty()).collect();
        loop {
            let mut changed = false;
            for &c in &cone {
                if alive.contains(&c) {
                    continue;
                }
                let ok = self.node(c).supports.iter().any(|s| s.premises.iter().all(|p| !cone.contains(p) || alive.contains(p)));
                if ok {
                    alive.insert(c);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let dead: BTreeSet<NodeId> = cone.difference(&alive).copied().collect();
        for &c in &alive {
            let stale: Vec<Support> =
                self.node(c).supports.iter().filter(|s| s.premises.iter().any(|p| dead.contains(p))).cloned().collect();
            for s in stale {
                self.nodes[c].as_mut().expect("live").supports.remove(&s);
                self.unlink(c, &s);
            }
        }
        for &d in &dead {
            let node = self.nodes[d].take().expect("live");
            self.by_key.remove(&node.tuple);
            if let Some(set) = self.by_pred.get_mut(&node.tuple.predicate) {
                set.remove(&d);
            }
            for s in &node.supports {
                for p in &s.premises {
                    if let Some(deps) = self.dependents.get_mut(p) {
                        deps.remove(&d);
                    }
                }
            }
            self.dependents.remove(&d);
        }
    }
}

fn unify(atom: &Atom, t: &Tuple, vars: &Vars) -> Option<Vars> {
    if atom.predicate != t.predicate {
        return None;
    }
    let mut vars = vars.clone();
    let subject = Value::Ident(t.subject.clone());
    for (slot, value) in [(&atom.subject, &subject), (&atom.object, &t.object)] {
        match slot {
            Slot::Any => {}
            Slot::Const(c) if c == value => {}
            Slot::Const(_) => return None,
            Slot::Var(v) => match vars.get(v) {
                Some(bound) if bound != value => return None,
                Some(_) => {}
                None => {
                    vars.insert(v.clone(), value.clone());
                }
            },
        }
    }
    Some(vars)
}

fn instantiate(slot: &Slot, vars: &Vars) -> Option<Value> {
    match slot {
        Slot::Const(c) => Some(c.clone()),
        Slot::Var(v) => vars.get(v).cloned(),
        Slot::Any => None,
    }
}

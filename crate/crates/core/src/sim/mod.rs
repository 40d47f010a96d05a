//! Deterministic scenario runner over a simulated clock.
//!
//! A [`ScenarioScript`] declares providers and a list of timed steps. The
//! runner builds a fresh [`Stack`], performs each step at
//! `clock_start + offset_min` and records what happened in a
//! [`ScenarioTrace`]. Nothing reads the wall clock, so a script and config
//! always produce the same trace.

mod provider;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use provider::{make_provider, SimProvider};

use crate::acquisition::{Payload, ProviderDescriptor, ProviderEvent, ProviderKind, ProviderMode};
use crate::config::Config;
use crate::kb::{JournalRecord, Pattern, SourceTag, Value};
use crate::reasoner::{Derivation, Resolution};
use crate::stack::{BatchOutcome, Stack, StackError};
use crate::time::Timestamp;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario: {0}")]
    ScriptParse(String),
    #[error("step {step} names undeclared provider `{provider}`")]
    UnknownProviderInScript { step: usize, provider: String },
    #[error("unknown provider kind `{0}`")]
    UnknownKind(String),
    #[error(transparent)]
    Stack(#[from] StackError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preamble {
    pub clock_start: Timestamp,
    #[serde(default)]
    pub providers: Vec<ProviderDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Emit {
        offset_min: i64,
        provider: String,
        payload: Payload,
        /// The step must fail with an error containing this text.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect_error: Option<String>,
    },
    UserUpdate {
        offset_min: i64,
        subject: String,
        predicate: String,
        object: Value,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect_error: Option<String>,
    },
    /// Compares the canonical activity at the step time. `activity: null`
    /// expects none.
    Expect {
        offset_min: i64,
        subject: String,
        activity: Option<Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source: Option<SourceTag>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        confidence: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        valid_from: Option<Timestamp>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        valid_to: Option<Timestamp>,
    },
    /// Runs a pattern at the step time; `expect` lists bindings as printed
    /// (`?a=Meeting`), compared without regard to order.
    Query {
        offset_min: i64,
        pattern: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        issuer: Option<String>,
        expect: Option<Vec<String>>,
    },
}

impl Step {
    pub fn offset_min(&self) -> i64 {
        match self {
            Step::Emit { offset_min, .. }
            | Step::UserUpdate { offset_min, .. }
            | Step::Expect { offset_min, .. }
            | Step::Query { offset_min, .. } => *offset_min,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    pub preamble: Preamble,
    pub steps: Vec<Step>,
}

/// Tolerance for `confidence` in expect steps.
pub const CONFIDENCE_TOLERANCE: f64 = 1e-9;

impl ScenarioScript {
    pub fn from_json(text: &str) -> Result<ScenarioScript, SimError> {
        let s: ScenarioScript = serde_json::from_str(text).map_err(|e| SimError::ScriptParse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    pub fn empty(name: &str, clock_start: Timestamp) -> ScenarioScript {
        ScenarioScript { name: name.into(), preamble: Preamble { clock_start, providers: Vec::new(), note: None }, steps: Vec::new() }
    }

    /// Offsets never decrease, providers are declared, and every expect step
    /// names a subject some earlier step mentioned.
    pub fn validate(&self) -> Result<(), SimError> {
        let declared: BTreeSet<&str> = self.preamble.providers.iter().map(|p| p.provider_id.as_str()).collect();
        if declared.len() != self.preamble.providers.len() {
            return Err(SimError::ScriptParse("duplicate provider id in preamble".into()));
        }
        let mut last = i64::MIN;
        let mut mentioned: BTreeSet<String> = BTreeSet::new();
        for (i, step) in self.steps.iter().enumerate() {
            if step.offset_min() < last {
                return Err(SimError::ScriptParse(format!("step {i} goes back in time")));
            }
            if step.offset_min() < 0 {
                return Err(SimError::ScriptParse(format!("step {i} has a negative offset")));
            }
            last = step.offset_min();
            match step {
                Step::Emit { provider, payload, .. } => {
                    if !declared.contains(provider.as_str()) {
                        return Err(SimError::UnknownProviderInScript { step: i, provider: provider.clone() });
                    }
                    mentioned.extend(payload.values().filter_map(|v| v.as_str()).map(str::to_string));
                }
                Step::UserUpdate { subject, .. } => {
                    mentioned.insert(subject.clone());
                }
                Step::Expect { subject, .. } if !mentioned.contains(subject) => {
                    return Err(SimError::ScriptParse(format!(
                        "step {i} expects an activity for `{subject}`, which no earlier step mentions"
                    )));
                }
                Step::Expect { .. } | Step::Query { .. } => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub expected: String,
    pub actual: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Index of the script step; poll deliveries carry the step that queued them.
    pub step: usize,
    pub time: Timestamp,
    pub action: String,
    pub mutations: Vec<JournalRecord>,
    pub derivations: Vec<Derivation>,
    pub resolutions: Vec<Resolution>,
    pub error: Option<String>,
    pub verdict: Option<Verdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTrace {
    pub name: String,
    pub clock_start: Timestamp,
    pub entries: Vec<TraceEntry>,
    pub passed: bool,
}

impl ScenarioTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<ScenarioTrace, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn verdicts(&self) -> impl Iterator<Item = (&TraceEntry, &Verdict)> {
        self.entries.iter().filter_map(|e| e.verdict.as_ref().map(|v| (e, v)))
    }

    /// One line per entry, then one per derivation, resolution and verdict.
    pub fn render_human(&self) -> String {
        let mut out = format!("scenario {} from {}\n", self.name, self.clock_start);
        for e in &self.entries {
            let _ = writeln!(out, "[{}] #{} {}", e.time, e.step, e.action);
            for d in &e.derivations {
                let premises: Vec<String> = d.premise_ids.iter().map(|p| p.to_string()).collect();
                let _ = writeln!(out, "    derived {} by {} from {}", d.derived_fact, d.rule_id, premises.join(", "));
            }
            for r in &e.resolutions {
                let _ = writeln!(out, "    resolved {} {} -> {}", r.subject, r.predicate, r.canonical.object);
            }
            if let Some(err) = &e.error {
                let _ = writeln!(out, "    error: {err}");
            }
            if let Some(v) = &e.verdict {
                let mark = if v.passed { "PASS" } else { "FAIL" };
                let _ = writeln!(out, "    {mark} expected {} got {}", v.expected, v.actual);
            }
        }
        let _ = writeln!(out, "{}", if self.passed { "all expectations passed" } else { "expectations failed" });
        out
    }
}

struct Runner<'a> {
    script: &'a ScenarioScript,
    stack: Stack,
    seqs: BTreeMap<String, u64>,
    queued: BTreeMap<String, VecDeque<(usize, Timestamp, Payload)>>,
    seen_resolutions: Vec<Resolution>,
    entries: Vec<TraceEntry>,
}

/// Runs a script against a fresh stack built from `config`. If the config
/// names a journal, mutations are appended to it.
pub fn run_scenario(script: &ScenarioScript, config: &Config) -> Result<ScenarioTrace, SimError> {
    script.validate()?;
    let mut stack = Stack::new(config)?;
    if let Some(path) = &config.journal {
        stack.kb.attach_journal(path).map_err(StackError::from)?;
    }
    for p in &script.preamble.providers {
        stack.register_provider(p.clone())?;
    }
    let mut r = Runner { script, stack, seqs: BTreeMap::new(), queued: BTreeMap::new(), seen_resolutions: Vec::new(), entries: Vec::new() };
    for (i, step) in script.steps.iter().enumerate() {
        let now = script.preamble.clock_start.plus_minutes(step.offset_min());
        r.deliver_polls(now);
        r.step(i, step, now);
    }
    r.stack.kb.flush().map_err(StackError::from)?;
    let passed = r.entries.iter().all(|e| e.verdict.as_ref().is_none_or(|v| v.passed));
    Ok(ScenarioTrace { name: script.name.clone(), clock_start: script.preamble.clock_start, entries: r.entries, passed })
}

impl Runner<'_> {
    fn entry(&self, step: usize, time: Timestamp, action: String) -> TraceEntry {
        TraceEntry { step, time, action, mutations: vec![], derivations: vec![], resolutions: vec![], error: None, verdict: None }
    }

    fn event(&mut self, provider: &str, time: Timestamp, payload: Payload) -> ProviderEvent {
        let seq = self.seqs.entry(provider.to_string()).or_insert(0);
        *seq += 1;
        ProviderEvent { provider_id: provider.to_string(), event_time: time, payload, sequence_no: *seq }
    }

    /// Applies a mutation batch and fills in the entry from its outcome.
    fn mutate(
        &mut self,
        mut entry: TraceEntry,
        expect_error: Option<&str>,
        f: impl FnOnce(&mut Stack) -> Result<BatchOutcome, StackError>,
    ) {
        let before = self.stack.kb.seq();
        let result = f(&mut self.stack);
        entry.mutations = self.stack.kb.log_since(before).to_vec();
        match result {
            Ok(out) => {
                entry.derivations = out.cycle.derivations;
                entry.resolutions = out.cycle.resolutions.into_iter().filter(|r| !self.seen_resolutions.contains(r)).collect();
                self.seen_resolutions.extend(entry.resolutions.iter().cloned());
                if let Some(want) = expect_error {
                    entry.verdict =
                        Some(Verdict { passed: false, expected: format!("error containing `{want}`"), actual: "success".into() });
                }
            }
            Err(e) => {
                let msg = e.to_string();
                let passed = expect_error.is_some_and(|w| msg.contains(w));
                let expected = expect_error.map_or("success".to_string(), |w| format!("error containing `{w}`"));
                entry.verdict = Some(Verdict { passed, expected, actual: msg.clone() });
                entry.error = Some(msg);
            }
        }
        self.entries.push(entry);
    }

    fn deliver_polls(&mut self, until: Timestamp) {
        loop {
            let pending: Vec<&str> = self.queued.iter().filter(|(_, q)| !q.is_empty()).map(|(k, _)| k.as_str()).collect();
            let Some(next) =
                pending.iter().map(|id| self.stack.acquisition.next_poll(id).unwrap_or(self.script.preamble.clock_start)).min()
            else {
                return;
            };
            if next > until {
                return;
            }
            for id in self.stack.acquisition.due_polls(next) {
                while let Some((step, _, payload)) = self.queued.get_mut(&id).and_then(|q| q.pop_front_if_due(next)) {
                    let e = self.event(&id, next, payload);
                    let entry = self.entry(step, next, format!("poll {id} {}", payload_text(&e.payload)));
                    self.mutate(entry, None, |s| s.ingest(&e));
                }
            }
        }
    }

    fn step(&mut self, i: usize, step: &Step, now: Timestamp) {
        match step {
            Step::Emit { provider, payload, expect_error, .. } => {
                let polled = self.stack.acquisition.provider(provider).is_some_and(|d| matches!(d.mode, ProviderMode::Poll { .. }));
                if polled {
                    self.queued.entry(provider.clone()).or_default().push_back((i, now, payload.clone()));
                    // A poll due right now picks it up at once.
                    self.deliver_polls(now);
                    return;
                }
                let e = self.event(provider, now, payload.clone());
                let entry = self.entry(i, now, format!("emit {provider} {}", payload_text(payload)));
                self.mutate(entry, expect_error.as_deref(), |s| s.ingest(&e));
            }
            Step::UserUpdate { subject, predicate, object, expect_error, .. } => {
                let entry = self.entry(i, now, format!("user {subject} sets {predicate}({subject}, {object})"));
                self.mutate(entry, expect_error.as_deref(), |s| s.user_update(subject, predicate, object.clone(), now));
            }
            Step::Expect { subject, activity, source, confidence, valid_from, valid_to, .. } => {
                let mut entry = self.entry(i, now, format!("expect activity of {subject}"));
                let actual = self.stack.current_activity(subject, now);
                let fact = actual.as_ref().and_then(|a| self.stack.kb.get(a.fact_id));
                let passed = match (&actual, activity) {
                    (None, None) => true,
                    (Some(a), Some(want)) => {
                        a.object == *want
                            && source.is_none_or(|s| s == a.source)
                            && confidence.is_none_or(|c| (c - a.confidence).abs() <= CONFIDENCE_TOLERANCE)
                            && valid_from.is_none_or(|t| fact.is_some_and(|f| f.valid_from == t))
                            && valid_to.is_none_or(|t| fact.is_some_and(|f| f.valid_to == Some(t)))
                    }
                    _ => false,
                };
                let mut expected = activity.as_ref().map_or("no activity".to_string(), Value::to_string);
                if let Some(s) = source {
                    let _ = write!(expected, " {s}");
                }
                if let Some(c) = confidence {
                    let _ = write!(expected, " {c}");
                }
                if valid_from.is_some() || valid_to.is_some() {
                    let show = |t: &Option<Timestamp>| t.map_or("_".to_string(), |t| t.to_string());
                    let _ = write!(expected, " [{}, {})", show(valid_from), show(valid_to));
                }
                let actual = match (&actual, fact) {
                    (Some(a), Some(f)) => format!("{} {} {} {}", a.object, a.source, a.confidence, f.interval()),
                    (Some(a), None) => format!("{} {} {}", a.object, a.source, a.confidence),
                    (None, _) => "no activity".into(),
                };
                entry.verdict = Some(Verdict { passed, expected, actual });
                self.entries.push(entry);
            }
            Step::Query { pattern, issuer, expect, .. } => {
                let who = issuer.as_deref().map_or(String::new(), |w| format!("{w} "));
                let mut entry = self.entry(i, now, format!("{who}query {pattern}"));
                match Pattern::parse(pattern) {
                    Ok(p) => {
                        let p = if p.time_at.is_none() { p.at(now) } else { p };
                        let mut got: Vec<String> = self.stack.query(&p).iter().map(|b| b.to_string()).collect();
                        if let Some(want) = expect {
                            let mut want = want.clone();
                            want.sort();
                            let mut sorted = got.clone();
                            sorted.sort();
                            entry.verdict = Some(Verdict { passed: sorted == want, expected: want.join(", "), actual: got.join(", ") });
                        } else {
                            got.sort();
                            entry.action.push_str(&format!(" -> {}", got.join(", ")));
                        }
                    }
                    Err(e) => {
                        entry.error = Some(e.to_string());
                        entry.verdict = Some(Verdict { passed: false, expected: "a valid pattern".into(), actual: e.to_string() });
                    }
                }
                self.entries.push(entry);
            }
        }
    }
}

trait PopDue {
    fn pop_front_if_due(&mut self, now: Timestamp) -> Option<(usize, Timestamp, Payload)>;
}

impl PopDue for VecDeque<(usize, Timestamp, Payload)> {
    fn pop_front_if_due(&mut self, now: Timestamp) -> Option<(usize, Timestamp, Payload)> {
        if self.front().is_some_and(|(_, t, _)| *t <= now) {
            self.pop_front()
        } else {
            None
        }
    }
}

fn payload_text(p: &Payload) -> String {
    serde_json::to_string(p).expect("payload serializes")
}

/// A script of `events` emissions from one generated provider per kind,
/// all seeded from `seed`, ending with an activity query per person.
pub fn fuzz_script(seed: u64, events: usize, clock_start: Timestamp) -> ScenarioScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut providers: Vec<SimProvider> =
        ProviderKind::ALL.iter().map(|k| make_provider(k.as_str(), rng.gen()).expect("known kind")).collect();
    let mut script = ScenarioScript::empty(&format!("fuzz-{seed}"), clock_start);
    script.preamble.providers = providers.iter().map(|p| p.descriptor().clone()).collect();
    let mut offset = 0;
    for _ in 0..events {
        offset += rng.gen_range(0..20);
        let p = &mut providers[rng.gen_range(0..ProviderKind::ALL.len())];
        let e = p.generate(clock_start.plus_minutes(offset));
        script.steps.push(Step::Emit { offset_min: offset, provider: e.provider_id, payload: e.payload, expect_error: None });
    }
    for who in ["John", "Jim", "Kim"] {
        script.steps.push(Step::Query { offset_min: offset, pattern: format!("Activity({who}, ?a)"), issuer: None, expect: None });
    }
    script
}

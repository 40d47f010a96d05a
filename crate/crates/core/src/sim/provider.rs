use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::SimError;
use crate::acquisition::{Payload, ProviderDescriptor, ProviderEvent, ProviderKind};
use crate::kb::SourceTag;
use crate::time::Timestamp;

/// A simulated software sensor. Events come from a script of timed payloads
/// or, once the script is exhausted, from a seeded generator.
#[derive(Clone, Debug)]
pub struct SimProvider {
    descriptor: ProviderDescriptor,
    script: VecDeque<(Timestamp, Payload)>,
    rng: ChaCha8Rng,
    seq: u64,
}

/// A push-mode provider named after its kind, generating events from `seed`.
pub fn make_provider(kind: &str, seed: u64) -> Result<SimProvider, SimError> {
    let kind = ProviderKind::parse(kind).ok_or_else(|| SimError::UnknownKind(kind.to_string()))?;
    let source = match kind {
        ProviderKind::Profile => SourceTag::Defined,
        _ => SourceTag::Sensed,
    };
    Ok(SimProvider {
        descriptor: ProviderDescriptor::push(kind.as_str(), kind, source),
        script: VecDeque::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        seq: 0,
    })
}

impl SimProvider {
    pub fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    pub fn with_id(mut self, id: &str) -> SimProvider {
        self.descriptor.provider_id = id.to_string();
        self
    }

    /// Queues payloads to emit at given times, ahead of generated ones.
    pub fn with_script(mut self, items: impl IntoIterator<Item = (Timestamp, Payload)>) -> SimProvider {
        self.script.extend(items);
        self
    }

    /// The next scripted event due at `now`, if any.
    pub fn due(&mut self, now: Timestamp) -> Option<ProviderEvent> {
        if self.script.front().is_some_and(|(t, _)| *t <= now) {
            let (t, payload) = self.script.pop_front().expect("checked");
            return Some(self.event(t, payload));
        }
        None
    }

    /// A generated event stamped `now`.
    pub fn generate(&mut self, now: Timestamp) -> ProviderEvent {
        let payload = random_payload(self.descriptor.kind, &mut self.rng, now);
        self.event(now, payload)
    }

    fn event(&mut self, at: Timestamp, payload: Payload) -> ProviderEvent {
        self.seq += 1;
        ProviderEvent { provider_id: self.descriptor.provider_id.clone(), event_time: at, payload, sequence_no: self.seq }
    }
}

const PEOPLE: [&str; 3] = ["John", "Jim", "Kim"];
const ROOMS: [&str; 2] = ["Office", "Classroom"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty")
}

/// A payload the bundled mapping accepts for `kind`.
fn random_payload(kind: ProviderKind, rng: &mut ChaCha8Rng, now: Timestamp) -> Payload {
    let start = now.plus_minutes(rng.gen_range(0..4) * 30);
    let end = start.plus_minutes([30, 60, 90][rng.gen_range(0..3)]);
    let v = match kind {
        ProviderKind::Timetable => json!({
            "user": pick(rng, &PEOPLE), "room": pick(rng, &ROOMS),
            "start": start.to_string(), "end": end.to_string(),
        }),
        ProviderKind::Calendar => json!({
            "user": pick(rng, &PEOPLE), "entry": "Personal",
            "start": start.to_string(), "end": end.to_string(),
        }),
        ProviderKind::Email => {
            let from = pick(rng, &PEOPLE);
            let to = pick(rng, &PEOPLE);
            let minutes = [30, 60, 90][rng.gen_range(0..3)];
            json!({
                "from": from, "to": to, "meeting_time": start.to_string(),
                "duration_minutes": minutes,
                "topic": pick(rng, &["Meeting", "DiscussingOnProject", "Presenting"]),
            })
        }
        ProviderKind::Weather => {
            if rng.gen_bool(0.7) {
                json!({ "condition": pick(rng, &["Snowing", "Raining", "Clear"]) })
            } else {
                json!({ "temperature": rng.gen_range(-10..30) })
            }
        }
        ProviderKind::Profile => {
            if rng.gen_bool(0.5) {
                json!({ "user": pick(rng, &PEOPLE), "works_at": pick(rng, &ROOMS) })
            } else {
                json!({ "user": pick(rng, &PEOPLE), "activity": pick(rng, &["OutForConference", "SendingEmail"]) })
            }
        }
        ProviderKind::Generic => json!({ "user": pick(rng, &PEOPLE), "search": "Flight" }),
    };
    serde_json::from_value(v).expect("object payload")
}

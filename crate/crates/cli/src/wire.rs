//! Newline-delimited JSON messages exchanged with providers and services.
//!
//! Every frame is one JSON object on one line, tagged by `type`:
//!
//! ```text
//! -> {"type":"hello","role":"provider","provider":{"provider_id":"tt","kind":"timetable","default_source":"Sensed"}}
//! <- {"type":"welcome","role":"provider"}
//! -> {"type":"event","provider_id":"tt","event_time":"...","payload":{...},"sequence_no":1}
//! <- {"type":"ack","seq":1,"facts":[1]}
//! -> {"type":"subscribe","id":"s","pattern":"Activity(John, ?a)"}
//! <- {"type":"subscribed","id":"s","sub_id":0}
//! <- {"type":"notification","sub_id":0,"seq":4,"kind":"added","fact":{...}}
//! ```

use context_kernel::acquisition::{ProviderDescriptor, ProviderEvent};
use context_kernel::kb::{Binding, Fact, FactId, Notification, SubId};
use context_kernel::reasoner::CurrentActivity;
use context_kernel::time::Timestamp;
use serde::{Deserialize, Serialize};

/// Longest accepted frame in bytes; longer input is a parse error.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Provider,
    Service,
}

/// Frames a client sends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMsg {
    /// Must come first. A provider may register its descriptor here.
    Hello {
        role: Role,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        provider: Option<ProviderDescriptor>,
    },
    Event(ProviderEvent),
    /// A ready-made fact, stored as is after validation.
    Fact {
        fact: Fact,
    },
    Query {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        pattern: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at: Option<Timestamp>,
    },
    /// The canonical activity of a subject at an instant.
    Activity {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        subject: String,
        at: Timestamp,
    },
    Subscribe {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        pattern: String,
    },
    Unsubscribe {
        sub_id: SubId,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not a well-formed frame. Closes the session.
    Parse,
    /// Well formed but not allowed here, e.g. an event before `hello`.
    /// Closes the session.
    Protocol,
    /// The stack refused the request; the session stays open.
    Rejected,
    /// A pattern that does not parse; the session stays open.
    Pattern,
}

impl ErrorCode {
    pub fn is_fatal(self) -> bool {
        matches!(self, ErrorCode::Parse | ErrorCode::Protocol)
    }
}

/// Frames the server sends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Welcome {
        role: Role,
    },
    /// Reply to `event` and `fact`: the KB sequence number after the batch
    /// and the ids stored directly.
    Ack {
        seq: u64,
        facts: Vec<FactId>,
    },
    Result {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bindings: Option<Vec<Binding>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        activity: Option<CurrentActivity>,
    },
    Subscribed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        sub_id: SubId,
    },
    Unsubscribed {
        sub_id: SubId,
        existed: bool,
    },
    Notification(Box<Notification>),
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl ServerMsg {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> ServerMsg {
        ServerMsg::Error { code, message: message.into() }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server frames serialize");
        s.push('\n');
        s
    }
}

/// Parses one frame, without its trailing newline.
pub fn parse_frame(line: &[u8]) -> Result<ClientMsg, String> {
    if line.len() > MAX_FRAME {
        return Err(format!("frame longer than {MAX_FRAME} bytes"));
    }
    let text = std::str::from_utf8(line).map_err(|e| e.to_string())?;
    serde_json::from_str(text).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        let msgs = [
            r#"{"type":"hello","role":"service"}"#,
            r#"{"type":"query","pattern":"Activity(John, ?a)","at":"2025-01-14T11:30:00Z"}"#,
            r#"{"type":"subscribe","id":"x","pattern":"*(?s, ?o)"}"#,
            r#"{"type":"event","provider_id":"w","event_time":"2025-01-14T11:30:00Z","payload":{"condition":"Snowing"},"sequence_no":3}"#,
        ];
        for m in msgs {
            let parsed = parse_frame(m.as_bytes()).unwrap();
            let again: ClientMsg = serde_json::from_str(&serde_json::to_string(&parsed).unwrap()).unwrap();
            assert_eq!(parsed, again);
        }
    }

    #[test]
    fn garbage_is_a_parse_error() {
        for bad in [&b"{"[..], b"null", b"{\"type\":\"dance\"}", b"{\"type\":\"query\"}", b"\xff\xfe", b"[1,2]"] {
            assert!(parse_frame(bad).is_err(), "{:?}", String::from_utf8_lossy(bad));
        }
        let line = ServerMsg::error(ErrorCode::Parse, "x").to_line();
        assert!(line.starts_with(r#"{"type":"error","code":"parse""#), "{line}");
    }
}

//! Control-plane messages between workers and the arbitrator. Every message
//! carries the protocol version, session id, worker id, and step; the body is
//! a kind-tagged payload with field names fixed by the wire contract.

use dynamix_core::metrics::LocalState;
use dynamix_core::policy::ActionDelta;
use dynamix_core::simenv::IterationOutcome;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolMessage {
    pub version: u32,
    pub session_id: String,
    pub worker_id: u32,
    pub step: u64,
    #[serde(flatten)]
    pub body: MessageBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageBody {
    /// Worker registration; the arbitrator validates the protocol version.
    Hello(Hello),
    /// Worker is at the episode-start barrier.
    Ready,
    /// One decision cycle's aggregated state plus the raw window behind it.
    StateReport(Box<StateReport>),
    /// The arbitrator's adjustment, with the clamped batch size echoed back.
    Action(ActionCommand),
    /// Episode boundary; workers reset to initial conditions.
    EpisodeEnd(EpisodeEnd),
    /// Session is over; workers shut down.
    Terminate,
    /// Generic acknowledgment (HELLO response).
    Ack(Ack),
}

impl MessageBody {
    pub fn kind_name(&self) -> &'static str {
        match self {
            MessageBody::Hello(_) => "HELLO",
            MessageBody::Ready => "READY",
            MessageBody::StateReport(_) => "STATE_REPORT",
            MessageBody::Action(_) => "ACTION",
            MessageBody::EpisodeEnd(_) => "EPISODE_END",
            MessageBody::Terminate => "TERMINATE",
            MessageBody::Ack(_) => "ACK",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    /// Episode count the worker expects to run; sanity-checked by the arbitrator.
    pub episodes: u64,
    pub steps_per_episode: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateReport {
    pub local: LocalState,
    /// The k raw outcomes the local state was aggregated from.
    pub window: Vec<IterationOutcome>,
    pub batch_size: u32,
    /// Worker's cumulative simulated seconds since episode start.
    pub sim_time: f64,
    pub episode: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub action: ActionDelta,
    pub delta: i32,
    /// Batch size after applying the clamp, echoed so both sides agree.
    pub new_batch_size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEnd {
    pub episode: u64,
    pub policy_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ProtocolMessage {
    pub fn new(session_id: &str, worker_id: u32, step: u64, body: MessageBody) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            session_id: session_id.to_string(),
            worker_id,
            step,
            body,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_are_screaming_snake_on_the_wire() {
        let msg = ProtocolMessage::new("s", 1, 0, MessageBody::Ready);
        let json = serde_json::to_string(&msg).unwrap();
        assert!(json.contains("\"kind\":\"READY\""), "{json}");

        let msg = ProtocolMessage::new(
            "s",
            1,
            3,
            MessageBody::EpisodeEnd(EpisodeEnd {
                episode: 2,
                policy_version: 5,
            }),
        );
        let json = serde_json::to_string(&msg).unwrap();
        assert!(json.contains("\"kind\":\"EPISODE_END\""), "{json}");
        assert!(json.contains("\"payload\""), "{json}");
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let json = r#"{"version":1,"session_id":"s","worker_id":0,"step":0,"kind":"BOGUS"}"#;
        assert!(serde_json::from_str::<ProtocolMessage>(json).is_err());
    }

    #[test]
    fn envelope_fields_are_mandatory() {
        let json = r#"{"version":1,"worker_id":0,"step":0,"kind":"READY"}"#;
        assert!(serde_json::from_str::<ProtocolMessage>(json).is_err());
    }
}

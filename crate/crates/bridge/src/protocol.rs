//! Wire messages. Every frame is one JSON object with a mandatory `type`.

use apfsim_core::simulator::TickRecord;
use apfsim_core::supervisor::{Mode, Thresholds};
use apfsim_core::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Hand positions farther than this from the world origin are rejected.
pub const MAX_HAND_NORM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub t: f64,
    pub q: [f64; 6],
    pub tcp: [f64; 3],
    pub v: [f64; 3],
    pub mode: Mode,
    pub hand: [f64; 3],
    pub d_ro: f64,
    /// Magnitudes of the three repulsive terms.
    pub forces: [f64; 3],
}

impl StateMessage {
    pub fn from_record(r: &TickRecord) -> Self {
        let hand = r.hand.unwrap_or_else(|| Vector3::repeat(f64::NAN));
        Self {
            t: r.t,
            q: r.q.into(),
            tcp: r.tcp.into(),
            v: r.v_cmd.into(),
            mode: r.mode,
            hand: hand.into(),
            d_ro: r.d_ro,
            forces: r.forces,
        }
    }
}

/// Sent once per connection before any state, so a client can draw zones
/// and the task without a second channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMessage {
    pub scenario: String,
    pub dt: f64,
    pub d_at: f64,
    pub d_act: f64,
    pub d_dct: f64,
    pub waypoints: Vec<[f64; 3]>,
}

impl ConfigMessage {
    pub fn new(scenario: &str, dt: f64, th: &Thresholds, waypoints: &[Vector3<f64>]) -> Self {
        Self {
            scenario: scenario.to_owned(),
            dt,
            d_at: th.d_at,
            d_act: th.d_act,
            d_dct: th.d_dct,
            waypoints: waypoints.iter().map(|w| (*w).into()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    State(StateMessage),
    Config(ConfigMessage),
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandMessage {
    pub pos: [f64; 3],
    /// Free-drive pull, m/s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drag: Option<[f64; 3]>,
}

impl HandMessage {
    pub fn new(pos: Vector3<f64>, drag: Option<Vector3<f64>>) -> Self {
        Self {
            pos: pos.into(),
            drag: drag.map(Into::into),
        }
    }

    pub fn pos(&self) -> Vector3<f64> {
        Vector3::from(self.pos)
    }

    pub fn drag(&self) -> Option<Vector3<f64>> {
        self.drag.map(Vector3::from)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.pos.iter().all(|c| c.is_finite()) {
            return Err(Error::validation("hand.pos", "coordinates must be finite"));
        }
        if self.pos().norm() > MAX_HAND_NORM {
            return Err(Error::validation("hand.pos", format!("norm must not exceed {MAX_HAND_NORM} m")));
        }
        if let Some(d) = self.drag {
            if !d.iter().all(|c| c.is_finite()) {
                return Err(Error::validation("hand.drag", "components must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Hand(HandMessage),
}

impl ClientMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client messages always serialize")
    }
}

/// Parses and validates one client text frame. Unknown keys are ignored.
pub fn parse_client_frame(text: &str) -> Result<HandMessage> {
    let msg: ClientMessage = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let ClientMessage::Hand(hand) = msg;
    hand.validate()?;
    Ok(hand)
}

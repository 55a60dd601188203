//! JSON text frames exchanged over the websocket.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Pilot,
    Spectator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMsg {
    Hello {
        role: Role,
        name: String,
    },
    Control {
        vx: f64,
        vy: f64,
        vz: f64,
        wz: f64,
        seq: u64,
    },
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFrame {
    pub p: [f64; 3],
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaserFrame {
    pub p: [f64; 3],
    pub psi: f64,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerFrame {
    pub sr_runner: f64,
    pub episodes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    State {
        tick: u64,
        episode: u64,
        runner: AgentFrame,
        chasers: Vec<ChaserFrame>,
        target: [f64; 3],
        bounds: [f64; 3],
    },
    Outcome {
        episode: u64,
        /// `reached`, `captured`, `wall` or `timeout`.
        result: String,
        ledger: LedgerFrame,
    },
    Error {
        message: String,
    },
}

impl ServerMsg {
    pub fn error(message: impl Into<String>) -> Self {
        ServerMsg::Error {
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        // every field is a plain number, string or array
        serde_json::to_string(self)
            .unwrap_or_else(|e| format!(r#"{{"type":"error","message":"{e}"}}"#))
    }
}

pub fn parse_client(text: &str) -> Result<ClientMsg, String> {
    serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))
}

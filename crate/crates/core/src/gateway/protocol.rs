//! JSON wire messages exchanged over `/ws`. Every frame is one JSON object
//! with a `type` discriminator; unknown fields are ignored.

use crate::arbiter::{Authority, Mode, Reason};
use crate::mapper::Confidence;
use crate::runtime::GoalStatus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Map,
    Costmap,
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CommandMessage {
    Joystick {
        fwd: f64,
        turn: f64,
    },
    SetMode {
        mode: Mode,
    },
    /// Either a point or a named goal.
    SetGoal {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        y: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    StartMapping,
    FinishMapping,
    Reset,
    RequestMap {
        layer: Layer,
    },
}

impl CommandMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            CommandMessage::Joystick { .. } => "joystick",
            CommandMessage::SetMode { .. } => "set_mode",
            CommandMessage::SetGoal { .. } => "set_goal",
            CommandMessage::StartMapping => "start_mapping",
            CommandMessage::FinishMapping => "finish_mapping",
            CommandMessage::Reset => "reset",
            CommandMessage::RequestMap { .. } => "request_map",
        }
    }

    /// Commands that move the chair or change what it does need the driver role.
    pub fn needs_driver(&self) -> bool {
        !matches!(self, CommandMessage::RequestMap { .. })
    }
}

const COMMAND_KINDS: &[&str] = &[
    "joystick",
    "set_mode",
    "set_goal",
    "start_mapping",
    "finish_mapping",
    "reset",
    "request_map",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Driver,
    Observer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Navigation,
    Mapping,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireTwist {
    pub v: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireObstacle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub tick: u64,
    pub sim_time: f64,
    pub phase: Phase,
    pub pose: WirePose,
    pub twist: WireTwist,
    pub mode: Mode,
    pub authority: Authority,
    pub reason: Reason,
    /// Distance from the planned path, when there is one.
    pub deviation: Option<f64>,
    pub goal: Option<WirePoint>,
    pub goal_status: GoalStatus,
    /// At most `MAX_PATH_POINTS` points.
    pub path: Option<Vec<[f64; 2]>>,
    pub events: Vec<String>,
    pub obstacles: Vec<WireObstacle>,
}

pub const MAX_PATH_POINTS: usize = 256;

/// Grid snapshot; `data` is the map file layout, base64 encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub layer: Layer,
    pub tick: u64,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub encoding: String,
    pub data: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCode {
    Decode,
    Role,
    Unreachable,
    OutOfBounds,
    UnknownGoal,
    WrongPhase,
    Io,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        client_id: u64,
        role: Role,
    },
    RoleChanged {
        role: Role,
    },
    State(StateMessage),
    Ack {
        command: String,
        tick: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    Rejected {
        command: String,
        code: RejectCode,
        reason: String,
    },
    Snapshot(Snapshot),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeErrorKind {
    /// Not valid JSON (including truncation).
    Syntax,
    NotAnObject,
    MissingType,
    UnknownType,
    /// Valid JSON of a known type with missing or ill-typed fields.
    InvalidFields,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("decode error at byte {offset}: {reason}")]
pub struct DecodeError {
    pub kind: DecodeErrorKind,
    pub offset: usize,
    pub reason: String,
}

fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut start = 0;
    for (i, l) in text.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (start + column.saturating_sub(1)).min(text.len());
        }
        start += l.len() + 1;
    }
    text.len()
}

fn syntax_error(bytes: &[u8], e: &serde_json::Error) -> DecodeError {
    DecodeError {
        kind: DecodeErrorKind::Syntax,
        // truncation points past the last byte
        offset: if e.is_eof() { bytes.len() } else { byte_offset(bytes, e.line(), e.column()) },
        reason: e.to_string(),
    }
}

pub fn decode_command(bytes: &[u8]) -> Result<CommandMessage, DecodeError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| syntax_error(bytes, &e))?;
    let obj = value.as_object().ok_or_else(|| DecodeError {
        kind: DecodeErrorKind::NotAnObject,
        offset: 0,
        reason: "expected a JSON object".into(),
    })?;
    let kind = obj.get("type").and_then(|t| t.as_str()).ok_or_else(|| DecodeError {
        kind: DecodeErrorKind::MissingType,
        offset: 0,
        reason: "missing string field `type`".into(),
    })?;
    if !COMMAND_KINDS.contains(&kind) {
        return Err(DecodeError {
            kind: DecodeErrorKind::UnknownType,
            offset: 0,
            reason: format!("unknown command type `{kind}`"),
        });
    }
    let cmd: CommandMessage = serde_json::from_value(value).map_err(|e| DecodeError {
        kind: DecodeErrorKind::InvalidFields,
        offset: 0,
        reason: e.to_string(),
    })?;
    if let CommandMessage::Joystick { fwd, turn } = cmd {
        if !fwd.is_finite() || !turn.is_finite() {
            return Err(DecodeError {
                kind: DecodeErrorKind::InvalidFields,
                offset: 0,
                reason: "joystick axes must be finite".into(),
            });
        }
    }
    Ok(cmd)
}

pub fn decode_server(bytes: &[u8]) -> Result<ServerMessage, DecodeError> {
    serde_json::from_slice(bytes).map_err(|e| {
        if e.is_syntax() || e.is_eof() {
            syntax_error(bytes, &e)
        } else {
            DecodeError {
                kind: DecodeErrorKind::InvalidFields,
                offset: byte_offset(bytes, e.line(), e.column()),
                reason: e.to_string(),
            }
        }
    })
}

pub fn encode_command(cmd: &CommandMessage) -> String {
    serde_json::to_string(cmd).expect("commands serialize")
}

pub fn encode_server(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}

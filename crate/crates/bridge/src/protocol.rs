//! Wire format of the `/ws` endpoint.
//!
//! Every message is one JSON object with a `type` and a schema version `v`.
//! Clients send `cmd`; the server answers with `ack` or `err` and pushes
//! `state` at the broadcast rate.
//!
//! ```text
//! {"type":"cmd","v":1,"id":3,"cmd":"set_user_velocity","vx":0.5,"vy":0.0}
//! {"type":"cmd","v":1,"cmd":"set_palm_mode","mode":"STRETCH"}
//! {"type":"cmd","v":1,"cmd":"mission","action":"takeoff"}
//! {"type":"cmd","v":1,"cmd":"set_param","key":"k_prime","value":0.25}
//! ```

use falconry_core::{Domain, Gesture, MissionPhase, PalmMode};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u32 = 1;
/// Fastest walking speed an operator may command.
pub const MAX_USER_SPEED: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissionAction {
    Takeoff,
    Reset,
}

/// Planner and gesture parameters that may change while flying.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKey {
    KPrime,
    DTh,
    RV,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientCommand {
    SetUserVelocity { vx: f64, vy: f64 },
    SetPalmMode { mode: PalmMode },
    Mission { action: MissionAction },
    SetParam { key: ParamKey, value: f64 },
}

impl ClientCommand {
    pub fn name(&self) -> &'static str {
        match self {
            ClientCommand::SetUserVelocity { .. } => "set_user_velocity",
            ClientCommand::SetPalmMode { .. } => "set_palm_mode",
            ClientCommand::Mission { .. } => "mission",
            ClientCommand::SetParam { .. } => "set_param",
        }
    }

    /// Checks that need no simulation state.
    fn check(&self) -> Result<(), String> {
        match *self {
            ClientCommand::SetUserVelocity { vx, vy } => {
                if !(vx.is_finite() && vy.is_finite()) {
                    return Err("velocity must be finite".into());
                }
                let speed = vx.hypot(vy);
                if speed > MAX_USER_SPEED {
                    return Err(format!("speed {speed:.3} m/s exceeds {MAX_USER_SPEED} m/s"));
                }
            }
            ClientCommand::SetParam { value, .. } if !value.is_finite() => {
                return Err("value must be finite".into());
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnsupportedVersion,
    ReadOnly,
    Invalid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandError {
    pub id: Option<u64>,
    pub code: ErrorCode,
    pub message: String,
}

/// A validated command with the client's correlation id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Request {
    pub id: Option<u64>,
    pub command: ClientCommand,
}

/// Parses one text frame from a client.
pub fn parse_request(text: &str) -> Result<Request, CommandError> {
    let fail = |id, code, message: String| CommandError { id, code, message };
    let value: Value = serde_json::from_str(text)
        .map_err(|e| fail(None, ErrorCode::Malformed, format!("not JSON: {e}")))?;
    let Value::Object(mut obj) = value else {
        return Err(fail(None, ErrorCode::Malformed, "expected a JSON object".into()));
    };
    let id = match obj.remove("id") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| fail(None, ErrorCode::Malformed, "id must be an unsigned integer".into()))?,
        ),
    };
    match obj.remove("v") {
        Some(v) if v.as_u64() == Some(u64::from(PROTOCOL_VERSION)) => {}
        Some(v) => {
            return Err(fail(id, ErrorCode::UnsupportedVersion, format!("unsupported version {v}")));
        }
        None => return Err(fail(id, ErrorCode::Malformed, "missing v".into())),
    }
    match obj.remove("type") {
        Some(Value::String(t)) if t == "cmd" => {}
        Some(t) => return Err(fail(id, ErrorCode::Malformed, format!("clients may only send cmd, got {t}"))),
        None => return Err(fail(id, ErrorCode::Malformed, "missing type".into())),
    }
    let command: ClientCommand = serde_json::from_value(Value::Object(obj))
        .map_err(|e| fail(id, ErrorCode::Malformed, e.to_string()))?;
    command.check().map_err(|m| fail(id, ErrorCode::Invalid, m))?;
    Ok(Request { id, command })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Controller,
    Observer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneView {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetpointView {
    pub position: [f64; 3],
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserView {
    pub chest: [f64; 3],
    pub facing: f64,
    pub palm: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateBroadcast {
    pub v: u32,
    pub t: f64,
    pub drone: DroneView,
    pub setpoint: SetpointView,
    pub user: UserView,
    pub phase: MissionPhase,
    pub domain: Option<Domain>,
    pub gesture: Gesture,
    /// Measured drone-palm distance.
    pub d_palm: f64,
    /// Measured drone-chest distance.
    pub r_chest: f64,
    pub cmd_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub v: u32,
    pub id: Option<u64>,
    /// Command name, or `connect` for the greeting.
    pub cmd: String,
    /// Simulation time at which the command took effect.
    pub t: f64,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub v: u32,
    pub id: Option<u64>,
    pub code: ErrorCode,
    pub message: String,
}

impl From<CommandError> for ErrorReply {
    fn from(e: CommandError) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id: e.id,
            code: e.code,
            message: e.message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    State(StateBroadcast),
    Ack(Ack),
    Err(ErrorReply),
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

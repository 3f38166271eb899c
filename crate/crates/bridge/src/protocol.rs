//! Wire messages. Every frame is one JSON object carrying `"version"` and `"type"`.

use laser_teleop::control::Region;
use laser_teleop::geometry::PoseDef;
use laser_teleop::harness::{Event, ObjectState, TickRow};
use laser_teleop::perception::LaserEstimate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const WIRE_VERSION: u32 = 1;

/// How far a direction or quaternion norm may stray from 1 before it is rejected.
pub const NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Start,
    Pause,
    Reset,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputMessage {
    /// Laser pointer ray in base_link, metres; `direction` must be unit length.
    PointerRay {
        origin: [f64; 3],
        direction: [f64; 3],
        on: bool,
    },
    /// Head orientation `[x, y, z, w]` in base_link.
    HeadOrientation { quaternion: [f64; 4] },
    SessionControl {
        action: ControlAction,
        /// Scenario id, only for `load`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scenario: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct WireError(pub String);

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl InputMessage {
    /// Parses and checks one client frame.
    pub fn parse(text: &str) -> Result<Self, WireError> {
        let err = |m: String| WireError(m);
        let mut value: Value = serde_json::from_str(text).map_err(|e| err(format!("not JSON: {e}")))?;
        let obj = value.as_object_mut().ok_or_else(|| err("message must be a JSON object".into()))?;
        let version = obj.remove("version").ok_or_else(|| err("missing field `version`".into()))?;
        match version.as_u64() {
            Some(v) if v == WIRE_VERSION as u64 => {}
            _ => return Err(err(format!("unsupported version {version}, server speaks {WIRE_VERSION}"))),
        }
        let msg: InputMessage = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        msg.check()?;
        Ok(msg)
    }

    fn check(&self) -> Result<(), WireError> {
        let unit = |v: &[f64], what: &str| {
            if v.iter().all(|x| x.is_finite()) && (norm(v) - 1.0).abs() <= NORM_TOLERANCE {
                Ok(())
            } else {
                Err(WireError(format!("{what} must be unit length")))
            }
        };
        match self {
            InputMessage::PointerRay { origin, direction, .. } => {
                if !origin.iter().all(|x| x.is_finite()) {
                    return Err(WireError("origin must be finite".into()));
                }
                unit(direction, "direction")
            }
            InputMessage::HeadOrientation { quaternion } => unit(quaternion, "quaternion"),
            InputMessage::SessionControl { action, scenario } => match (action, scenario) {
                (ControlAction::Load, None) => Err(WireError("load needs a scenario id".into())),
                (ControlAction::Load, Some(_)) | (_, None) => Ok(()),
                (_, Some(_)) => Err(WireError("only load takes a scenario id".into())),
            },
        }
    }

    /// The frame a client would send for this message.
    pub fn to_wire(&self) -> String {
        let mut v = serde_json::to_value(self).expect("input messages serialize");
        v["version"] = WIRE_VERSION.into();
        v.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Controller,
    Observer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Running,
    Paused,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joints {
    pub q: [f64; 6],
    pub gripper: f64,
    pub effort: f64,
}

/// State pushed to every client once per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub version: u32,
    pub state: SessionState,
    pub scenario: String,
    pub tick: u64,
    /// Simulation time, s.
    pub t: f64,
    pub tcp: PoseDef,
    pub joints: Joints,
    pub laser_on: bool,
    pub laser_hit: Option<[f64; 3]>,
    pub estimate: LaserEstimate,
    pub region: Region,
    pub mode: String,
    pub dwell_progress: f64,
    pub active_button: Option<String>,
    pub attached: Option<String>,
    pub objects: Vec<ObjectState>,
    /// Most recent event of the session so far.
    pub last_event: Option<Event>,
}

impl StateSnapshot {
    pub fn from_row(row: &TickRow, state: SessionState, scenario: &str, last_event: Option<Event>) -> Self {
        StateSnapshot {
            version: WIRE_VERSION,
            state,
            scenario: scenario.to_string(),
            tick: row.tick,
            t: row.t,
            tcp: row.tcp,
            joints: Joints {
                q: row.q,
                gripper: row.gripper,
                effort: row.effort,
            },
            laser_on: row.input.laser.on,
            laser_hit: row.laser_hit,
            estimate: row.estimate,
            region: row.region.clone(),
            mode: row.mode.clone(),
            dwell_progress: row.dwell_progress,
            active_button: row.active_button.clone(),
            attached: row.attached.clone(),
            objects: row.objects.clone(),
            last_event,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        version: u32,
        role: Role,
        /// Simulation tick rate, Hz.
        rate: f64,
        scenario: String,
    },
    Snapshot(Box<StateSnapshot>),
    Error { version: u32, message: String },
}

impl ServerMessage {
    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error {
            version: WIRE_VERSION,
            message: message.into(),
        }
    }

    pub fn to_wire(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

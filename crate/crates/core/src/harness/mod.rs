//! Scenario runner, scripted input, head-orientation baseline, metrics, recording and replay.

mod config;
pub mod imu;
pub mod metrics;
mod recording;
mod scenario;
mod session;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use config::{ExecConfig, PerceptionConfig, RunConfig};
pub use imu::{ImuBaseline, ImuConfig, ImuOutput, Plane};
pub use metrics::{Metrics, TargetResult};
pub use recording::{Header, Outcome, Recording, Summary, RECORDING_SCHEMA_VERSION};
pub use scenario::{
    look_orientation, neutral_head, quat_to_array, ControllerKind, Input, Keyframe, Scenario, ScriptPlayer, Success,
    Target, SCENARIO_SCHEMA_VERSION,
};
pub use session::{Event, ImuEvent, ObjectState, Session, TickInput, TickRow};

use crate::error::{Error, Result};
use crate::kinematics::ArmModel;
use crate::scene::Scene;

/// Passes a value through its JSON form so a run starts from exactly what a reader of the
/// recording will reconstruct (deserialization renormalizes quaternions).
fn reparse<T: Serialize + DeserializeOwned>(v: &T) -> Result<T> {
    let value = serde_json::to_value(v).map_err(|e| Error::schema(e.to_string()))?;
    serde_json::from_value(value).map_err(|e| Error::schema(e.to_string()))
}

/// Collects rows and decides when the task is over.
#[derive(Clone)]
pub struct Recorder {
    header: Header,
    rows: Vec<TickRow>,
    tracker: metrics::TaskTracker,
}

impl Recorder {
    pub fn new(header: Header) -> Self {
        Recorder {
            tracker: metrics::TaskTracker::new(&header.scenario, header.rate),
            header,
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn rows(&self) -> &[TickRow] {
        &self.rows
    }

    /// Appends a row. Returns true once the scenario's success criterion holds.
    pub fn push(&mut self, row: TickRow) -> bool {
        let done = self.tracker.update(&row);
        self.rows.push(row);
        done
    }

    /// The recording as it would be if the run ended now.
    pub fn recording(&self) -> Recording {
        self.clone().finish()
    }

    pub fn finish(self) -> Recording {
        let metrics = metrics::compute(&self.header.scenario, &self.rows, self.header.rate);
        let outcome = if metrics.complete {
            Outcome::Completed
        } else {
            Outcome::Incomplete
        };
        Recording {
            summary: Summary {
                outcome,
                completed_at: self.tracker.completed_at,
                rows: self.rows.len(),
                metrics,
            },
            header: self.header,
            rows: self.rows,
        }
    }
}

/// Builds the session and recording header for a scenario.
pub fn prepare(scenario: &Scenario) -> Result<(Session, Header)> {
    let scene = scenario.load_scene()?;
    scenario.validate(&scene)?;
    let mut scenario = scenario.clone();
    if let Some(p) = &scenario.config.perception.sidecar {
        scenario.config.perception.sidecar = Some(scenario.resolve(p));
    }
    let base_dir = scenario.base_dir.clone();
    let mut scenario = reparse(&scenario)?;
    scenario.base_dir = base_dir;
    let header = Header {
        schema_version: RECORDING_SCHEMA_VERSION,
        scene: reparse(&scene.to_file())?,
        arm: reparse(ArmModel::default_arm().file())?,
        rate: scene.camera.rate,
        scenario,
    };
    let session = session_from(&header)?;
    Ok((session, header))
}

fn session_from(header: &Header) -> Result<Session> {
    let scene = Scene::from_file(header.scene.clone(), None)?;
    if scene.camera.rate != header.rate {
        return Err(Error::invalid("recording rate does not match its scene camera rate"));
    }
    let model = ArmModel::from_file(header.arm.clone())?;
    Session::new(scene, model, &header.scenario)
}

/// Runs a scripted scenario to completion or its time limit.
pub fn run(scenario: &Scenario) -> Result<Recording> {
    let Input::Scripted { keyframes } = &scenario.input else {
        return Err(Error::invalid("live scenarios are driven through the bridge, not run directly"));
    };
    let (mut session, header) = prepare(scenario)?;
    let mut player = ScriptPlayer::new(keyframes, header.scenario.seed);
    let last = header.scenario.ticks(header.rate);
    let mut rec = Recorder::new(header);
    for _ in 0..=last {
        let input = player.input(session.time(), session.scene());
        if rec.push(session.step(&input)) {
            break;
        }
    }
    Ok(rec.finish())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub rows: usize,
    /// Ticks whose re-simulated row differs from the recorded one.
    pub mismatched: Vec<u64>,
    pub metrics: Metrics,
    pub metrics_match: bool,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty() && self.metrics_match
    }
}

/// Re-simulates a recording from its header and recorded inputs, comparing every row.
pub fn replay(recording: &Recording) -> Result<ReplayReport> {
    let mut session = session_from(&recording.header)?;
    let mut rec = Recorder::new(recording.header.clone());
    let mut mismatched = Vec::new();
    for old in &recording.rows {
        let row = session.step(&old.input);
        if &row != old {
            mismatched.push(old.tick);
        }
        rec.push(row);
    }
    let out = rec.finish();
    Ok(ReplayReport {
        rows: out.rows.len(),
        mismatched,
        metrics_match: out.summary.metrics == recording.summary.metrics,
        metrics: out.summary.metrics,
    })
}

//! The live session: owns the deterministic core and talks to clients only through channels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{SyncSender, TrySendError};
use std::sync::Arc;

use laser_teleop::harness::{
    look_orientation, neutral_head, prepare, quat_to_array, Event, Input, Recorder, Recording, Scenario,
    ScriptPlayer, Session, TickInput,
};
use laser_teleop::scene::LaserRay;
use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};

use crate::protocol::{ControlAction, InputMessage, Role, ServerMessage, SessionState, StateSnapshot};
use crate::Error;

pub type ClientId = u64;

/// Frames queued for one client's connection thread.
#[derive(Debug, Clone, PartialEq)]
pub enum Outgoing {
    Text(Arc<str>),
    Close,
}

/// Everything a connection thread can tell the hub.
#[derive(Debug)]
pub enum Inbound {
    Join { id: ClientId, outbox: SyncSender<Outgoing> },
    Text { id: ClientId, text: String },
    Leave { id: ClientId },
}

#[derive(Debug, Clone)]
pub struct HubConfig {
    /// Where `load` looks up `<id>.json`.
    pub scenarios_dir: Option<PathBuf>,
    /// Read-only clients allowed besides the controller.
    pub max_observers: usize,
    /// Start stepping without waiting for a `start` message.
    pub autostart: bool,
    /// Finished, reset or replaced sessions are saved here as JSONL.
    pub record_dir: Option<PathBuf>,
}

impl Default for HubConfig {
    fn default() -> Self {
        HubConfig {
            scenarios_dir: None,
            max_observers: 8,
            autostart: true,
            record_dir: None,
        }
    }
}

/// Scenario used when the bridge is started without one: the desk scene, live input, one hour.
pub fn live_scenario() -> Scenario {
    Scenario::from_json(r#"{"version":1,"name":"live","input":{"mode":"live"},"duration":3600}"#, None)
        .expect("built-in scenario parses")
}

struct Client {
    role: Role,
    outbox: SyncSender<Outgoing>,
}

pub struct Hub {
    config: HubConfig,
    scenario: Scenario,
    session: Session,
    recorder: Recorder,
    player: Option<ScriptPlayer>,
    state: SessionState,
    pointer: LaserRay,
    head: Option<UnitQuaternion<f64>>,
    derived_head: UnitQuaternion<f64>,
    last_event: Option<Event>,
    last_snapshot: Option<StateSnapshot>,
    clients: BTreeMap<ClientId, Client>,
    controller: Option<ClientId>,
    saved: Vec<PathBuf>,
    /// Rows recorded since the last save.
    dirty: bool,
}

impl Hub {
    pub fn new(scenario: Scenario, config: HubConfig) -> Result<Self, Error> {
        let (session, header) = prepare(&scenario)?;
        let player = match &scenario.input {
            Input::Scripted { keyframes } => Some(ScriptPlayer::new(keyframes, header.scenario.seed)),
            Input::Live => None,
        };
        let pointer = LaserRay::off(session.scene().head_position());
        Ok(Hub {
            state: if config.autostart {
                SessionState::Running
            } else {
                SessionState::Paused
            },
            config,
            scenario,
            session,
            recorder: Recorder::new(header),
            player,
            pointer,
            head: None,
            derived_head: neutral_head(),
            last_event: None,
            last_snapshot: None,
            clients: BTreeMap::new(),
            controller: None,
            saved: Vec::new(),
            dirty: false,
        })
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn rate(&self) -> f64 {
        self.session.rate()
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn recording(&self) -> Recording {
        self.recorder.recording()
    }

    pub fn last_snapshot(&self) -> Option<&StateSnapshot> {
        self.last_snapshot.as_ref()
    }

    /// Recordings written to `record_dir` so far.
    pub fn saved(&self) -> &[PathBuf] {
        &self.saved
    }

    pub fn controller(&self) -> Option<ClientId> {
        self.controller
    }

    pub fn handle(&mut self, msg: Inbound) {
        match msg {
            Inbound::Join { id, outbox } => self.join(id, outbox),
            Inbound::Leave { id } => self.leave(id),
            Inbound::Text { id, text } => self.text(id, &text),
        }
    }

    fn send(&mut self, id: ClientId, msg: Outgoing) {
        let gone = match self.clients.get(&id) {
            Some(c) => matches!(c.outbox.try_send(msg), Err(TrySendError::Disconnected(_))),
            None => false,
        };
        if gone {
            self.leave(id);
        }
    }

    fn reply(&mut self, id: ClientId, msg: &ServerMessage) {
        self.send(id, Outgoing::Text(msg.to_wire().into()));
    }

    fn join(&mut self, id: ClientId, outbox: SyncSender<Outgoing>) {
        let observers = self.clients.values().filter(|c| c.role == Role::Observer).count();
        let role = if self.controller.is_none() {
            Role::Controller
        } else if observers < self.config.max_observers {
            Role::Observer
        } else {
            let full = ServerMessage::error("server full");
            let _ = outbox.try_send(Outgoing::Text(full.to_wire().into()));
            let _ = outbox.try_send(Outgoing::Close);
            return;
        };
        if role == Role::Controller {
            self.controller = Some(id);
        }
        self.clients.insert(id, Client { role, outbox });
        let hello = ServerMessage::Hello {
            version: crate::protocol::WIRE_VERSION,
            role,
            rate: self.rate(),
            scenario: self.scenario.name.clone(),
        };
        self.reply(id, &hello);
    }

    /// A leaving controller turns the laser off; the session itself carries on.
    fn leave(&mut self, id: ClientId) {
        self.clients.remove(&id);
        if self.controller == Some(id) {
            self.controller = None;
            self.pointer.on = false;
        }
    }

    fn text(&mut self, id: ClientId, text: &str) {
        let msg = match InputMessage::parse(text) {
            Ok(m) => m,
            Err(e) => return self.reply(id, &ServerMessage::error(e.0)),
        };
        if self.controller != Some(id) {
            return self.reply(id, &ServerMessage::error("read-only client: input ignored"));
        }
        if let Err(e) = self.apply(msg) {
            self.reply(id, &ServerMessage::error(e.to_string()));
        }
    }

    /// Applies one input as the controlling client. Pointer and head samples only overwrite the
    /// held value, so the latest one before a tick is the one consumed.
    pub fn apply(&mut self, msg: InputMessage) -> Result<(), Error> {
        match msg {
            InputMessage::PointerRay { .. } | InputMessage::HeadOrientation { .. } if self.player.is_some() => {
                Err(Error::Rejected("scenario is scripted; input ignored".into()))
            }
            InputMessage::PointerRay { origin, direction, on } => {
                self.pointer = LaserRay::new(Point3::from(origin), Vector3::from(direction), on);
                Ok(())
            }
            InputMessage::HeadOrientation { quaternion: [x, y, z, w] } => {
                self.head = Some(UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)));
                Ok(())
            }
            InputMessage::SessionControl { action, scenario } => match action {
                ControlAction::Start if self.state == SessionState::Finished => {
                    Err(Error::Rejected("session finished; reset or load to run again".into()))
                }
                ControlAction::Start => {
                    self.state = SessionState::Running;
                    Ok(())
                }
                ControlAction::Pause => {
                    if self.state == SessionState::Running {
                        self.state = SessionState::Paused;
                    }
                    Ok(())
                }
                ControlAction::Reset => self.restart(self.scenario.clone()),
                ControlAction::Load => {
                    let id = scenario.unwrap_or_default();
                    let next = self.lookup(&id)?;
                    self.restart(next)
                }
            },
        }
    }

    fn lookup(&self, id: &str) -> Result<Scenario, Error> {
        let dir = self
            .config
            .scenarios_dir
            .as_deref()
            .ok_or_else(|| Error::Rejected("no scenario directory configured".into()))?;
        let plain = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !plain {
            return Err(Error::Rejected(format!("bad scenario id {id:?}")));
        }
        Ok(Scenario::load(&dir.join(format!("{id}.json")))?)
    }

    fn restart(&mut self, scenario: Scenario) -> Result<(), Error> {
        let config = HubConfig {
            autostart: false,
            ..self.config.clone()
        };
        let mut next = Hub::new(scenario, config)?;
        self.save()?;
        next.clients = std::mem::take(&mut self.clients);
        next.controller = self.controller;
        next.saved = std::mem::take(&mut self.saved);
        next.config = self.config.clone();
        *self = next;
        Ok(())
    }

    /// Writes the current recording to `record_dir`, if configured and not empty.
    pub fn save(&mut self) -> Result<Option<PathBuf>, Error> {
        let Some(dir) = self.config.record_dir.clone() else { return Ok(None) };
        if !self.dirty {
            return Ok(None);
        }
        let path = next_free(&dir, &self.scenario.name);
        self.recording().save(&path)?;
        self.saved.push(path.clone());
        self.dirty = false;
        Ok(Some(path))
    }

    fn input(&mut self) -> TickInput {
        if let Some(player) = &mut self.player {
            return player.input(self.session.time(), self.session.scene());
        }
        let head = match self.head {
            Some(q) => q,
            None if self.pointer.on => look_orientation(&Vector3::from(self.pointer.direction)),
            None => self.derived_head,
        };
        self.derived_head = head;
        TickInput {
            laser: self.pointer,
            head: quat_to_array(&head),
        }
    }

    /// Advances one tick if running and pushes a snapshot to every client. While paused or
    /// finished the last snapshot is re-sent with the current state. Returns true if it stepped.
    pub fn tick(&mut self) -> bool {
        let stepped = self.state == SessionState::Running;
        if stepped {
            let input = self.input();
            let row = self.session.step(&input);
            if let Some(e) = row.events.last() {
                self.last_event = Some(e.clone());
            }
            let last_tick = self.scenario.ticks(self.rate());
            let snapshot_row = row.clone();
            let done = self.recorder.push(row);
            self.dirty = true;
            if done || snapshot_row.tick >= last_tick {
                self.state = SessionState::Finished;
                // Saving is best effort here; a failure shows up as a missing file.
                let _ = self.save();
            }
            self.last_snapshot = Some(StateSnapshot::from_row(
                &snapshot_row,
                self.state,
                &self.scenario.name,
                self.last_event.clone(),
            ));
        } else if let Some(s) = &mut self.last_snapshot {
            s.state = self.state;
        }
        if let Some(s) = &self.last_snapshot {
            let frame: Arc<str> = ServerMessage::Snapshot(Box::new(s.clone())).to_wire().into();
            let ids: Vec<ClientId> = self.clients.keys().copied().collect();
            for id in ids {
                self.send(id, Outgoing::Text(frame.clone()));
            }
        }
        stepped
    }
}

fn next_free(dir: &Path, name: &str) -> PathBuf {
    (1..)
        .map(|n| dir.join(format!("{name}-{n:03}.jsonl")))
        .find(|p| !p.exists())
        .expect("some index is free")
}

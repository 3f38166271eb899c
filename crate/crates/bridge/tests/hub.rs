use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};

use laser_teleop::harness::{run, Scenario};
use laser_teleop_bridge::{
    live_scenario, ControlAction, Hub, HubConfig, Inbound, InputMessage, Outgoing, Role, ServerMessage,
    SessionState,
};
use nalgebra::Point3;

fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenarios_dir().join(format!("{name}.json"))).unwrap()
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn join(hub: &mut Hub, id: u64) -> Receiver<Outgoing> {
    let (tx, rx) = sync_channel(1024);
    hub.handle(Inbound::Join { id, outbox: tx });
    rx
}

fn say(hub: &mut Hub, id: u64, text: impl Into<String>) {
    hub.handle(Inbound::Text { id, text: text.into() });
}

fn drain(rx: &Receiver<Outgoing>) -> Vec<ServerMessage> {
    rx.try_iter()
        .filter_map(|o| match o {
            Outgoing::Text(t) => Some(serde_json::from_str(&t).unwrap()),
            Outgoing::Close => None,
        })
        .collect()
}

fn errors(msgs: &[ServerMessage]) -> Vec<String> {
    msgs.iter()
        .filter_map(|m| match m {
            ServerMessage::Error { message, .. } => Some(message.clone()),
            _ => None,
        })
        .collect()
}

fn pointer_at(p: [f64; 3]) -> InputMessage {
    let head = laser_teleop::scene::Scene::default_desk().head_position();
    let d = (Point3::from(p) - head).normalize();
    InputMessage::PointerRay {
        origin: head.coords.into(),
        direction: d.into(),
        on: true,
    }
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bridge-hub-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn scripted_hub_matches_batch_run() {
    let s = scenario("dwell_goal");
    let mut hub = Hub::new(s.clone(), HubConfig::default()).unwrap();
    let _a = join(&mut hub, 1);
    let _b = join(&mut hub, 2);
    while hub.state() == SessionState::Running {
        hub.tick();
    }
    assert_eq!(hub.state(), SessionState::Finished);
    assert_eq!(hub.recording(), run(&s).unwrap());
}

#[test]
fn latest_pointer_sample_wins() {
    let mut hub = Hub::new(live_scenario(), HubConfig::default()).unwrap();
    let _c = join(&mut hub, 1);
    let samples = [[0.5, 0.0, 0.0], [0.6, 0.1, 0.0], [0.45, 0.02, 0.0]];
    for p in samples {
        say(&mut hub, 1, pointer_at(p).to_wire());
    }
    assert!(hub.tick());
    let rec = hub.recording();
    assert_eq!(rec.rows.len(), 1);
    let InputMessage::PointerRay { direction, .. } = pointer_at(samples[2]) else { unreachable!() };
    let got = rec.rows[0].input.laser.direction;
    assert!((0..3).all(|i| (got[i] - direction[i]).abs() < 1e-12), "{got:?}");
    let hit = rec.rows[0].laser_hit.unwrap();
    assert!((Point3::from(hit) - Point3::from(samples[2])).norm() < 1e-9);
}

#[test]
fn first_client_controls_others_observe() {
    let mut hub = Hub::new(live_scenario(), HubConfig::default()).unwrap();
    let ctl = join(&mut hub, 1);
    let obs = join(&mut hub, 2);
    let role = |msgs: &[ServerMessage]| match &msgs[0] {
        ServerMessage::Hello { role, version, .. } => {
            assert_eq!(*version, 1);
            *role
        }
        m => panic!("expected hello, got {m:?}"),
    };
    assert_eq!(role(&drain(&ctl)), Role::Controller);
    assert_eq!(role(&drain(&obs)), Role::Observer);

    say(&mut hub, 2, pointer_at([0.5, 0.0, 0.0]).to_wire());
    assert!(errors(&drain(&obs))[0].contains("read-only"));
    say(&mut hub, 1, "{\"version\":1,\"type\":\"pointer_ray\"");
    assert!(errors(&drain(&ctl))[0].contains("not JSON"));
    say(&mut hub, 1, pointer_at([0.5, 0.0, 0.0]).to_wire());
    hub.tick();
    assert!(hub.recording().rows[0].input.laser.on);
    assert!(errors(&drain(&ctl)).is_empty());

    // Controller drops: laser goes off, session keeps ticking, next client takes over.
    hub.handle(Inbound::Leave { id: 1 });
    hub.tick();
    let rec = hub.recording();
    assert_eq!(rec.rows.len(), 2);
    assert!(!rec.rows[1].input.laser.on);
    assert_eq!(hub.state(), SessionState::Running);
    let again = join(&mut hub, 3);
    assert_eq!(role(&drain(&again)), Role::Controller);
    let snaps = drain(&obs).into_iter().filter(|m| matches!(m, ServerMessage::Snapshot(_))).count();
    assert_eq!(snaps, 2);
}

#[test]
fn observer_cap_is_enforced() {
    let config = HubConfig {
        max_observers: 1,
        ..HubConfig::default()
    };
    let mut hub = Hub::new(live_scenario(), config).unwrap();
    let _c = join(&mut hub, 1);
    let _o = join(&mut hub, 2);
    let full = join(&mut hub, 3);
    let got: Vec<Outgoing> = full.try_iter().collect();
    assert_eq!(got.len(), 2);
    assert!(matches!(&got[0], Outgoing::Text(t) if t.contains("server full")));
    assert_eq!(got[1], Outgoing::Close);
}

#[test]
fn pause_start_reset_and_load() {
    let rec_dir = tmp("records");
    let config = HubConfig {
        autostart: false,
        scenarios_dir: Some(scenarios_dir()),
        record_dir: Some(rec_dir.clone()),
        ..HubConfig::default()
    };
    let mut hub = Hub::new(live_scenario(), config).unwrap();
    let ctl = join(&mut hub, 1);
    assert!(!hub.tick());
    assert!(hub.recording().rows.is_empty());
    let control = |action, scenario: Option<&str>| {
        InputMessage::SessionControl {
            action,
            scenario: scenario.map(String::from),
        }
        .to_wire()
    };
    say(&mut hub, 1, control(ControlAction::Start, None));
    for _ in 0..5 {
        assert!(hub.tick());
    }
    say(&mut hub, 1, control(ControlAction::Pause, None));
    assert!(!hub.tick());
    assert_eq!(hub.recording().rows.len(), 5);

    say(&mut hub, 1, control(ControlAction::Reset, None));
    assert_eq!(hub.state(), SessionState::Paused);
    assert!(hub.recording().rows.is_empty());
    assert_eq!(hub.saved().len(), 1);
    assert!(hub.saved()[0].starts_with(&rec_dir));
    assert_eq!(hub.controller(), Some(1));

    say(&mut hub, 1, control(ControlAction::Load, Some("../etc/passwd")));
    say(&mut hub, 1, control(ControlAction::Load, Some("no_such_scenario")));
    let errs = errors(&drain(&ctl));
    assert!(errs[0].contains("bad scenario id"), "{errs:?}");
    assert!(errs[1].contains("no_such_scenario"), "{errs:?}");

    say(&mut hub, 1, control(ControlAction::Load, Some("button_z_pos")));
    assert_eq!(hub.scenario().name, "button_z_pos");
    say(&mut hub, 1, control(ControlAction::Start, None));
    while hub.tick() {}
    assert_eq!(hub.state(), SessionState::Finished);
    say(&mut hub, 1, control(ControlAction::Start, None));
    assert!(errors(&drain(&ctl)).last().unwrap().contains("finished"));
    // Finished run saved once, not again on reset.
    assert_eq!(hub.saved().len(), 2);
    say(&mut hub, 1, control(ControlAction::Reset, None));
    let files: Vec<_> = std::fs::read_dir(&rec_dir).unwrap().collect();
    assert_eq!(files.len(), 2);
}

#[test]
fn held_pointer_fills_dwell_then_executes() {
    let mut hub = Hub::new(live_scenario(), HubConfig::default()).unwrap();
    let ctl = join(&mut hub, 1);
    say(&mut hub, 1, pointer_at([0.55, 0.1, 0.0]).to_wire());
    for _ in 0..100 {
        hub.tick();
    }
    let snaps: Vec<_> = drain(&ctl)
        .into_iter()
        .filter_map(|m| match m {
            ServerMessage::Snapshot(s) => Some(s),
            _ => None,
        })
        .collect();
    assert_eq!(snaps.len(), 100);
    assert!(snaps.windows(2).all(|w| w[1].t > w[0].t));
    let exec = snaps.iter().position(|s| s.mode == "executing_trajectory").unwrap();
    let dwell: Vec<f64> = snaps[..exec].iter().filter(|s| s.mode == "dwell_env").map(|s| s.dwell_progress).collect();
    assert!(dwell[0] < 0.05);
    assert!(dwell.windows(2).all(|w| w[1] >= w[0]));
    assert!(*dwell.last().unwrap() > 0.98, "{:?}", dwell.last());
    assert!((snaps[exec].t - 3.0).abs() < 0.1, "executing from {}", snaps[exec].t);
    assert!(snaps[exec].last_event.is_some());
}

use std::net::TcpStream;
use std::path::Path;
use std::time::{Duration, Instant};

use laser_teleop::harness::{run, Scenario};
use laser_teleop::scene::Scene;
use laser_teleop_bridge::{
    live_scenario, Hub, HubConfig, InputMessage, Role, Server, ServerConfig, ServerMessage, SessionState,
    StateSnapshot,
};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

type Ws = WebSocket<MaybeTlsStream<TcpStream>>;

fn fast() -> ServerConfig {
    ServerConfig {
        tick_rate: Some(300.0),
        ..ServerConfig::default()
    }
}

fn connect(server: &Server) -> (Ws, Role) {
    let (mut ws, _) = tungstenite::connect(format!("ws://{}", server.local_addr())).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_mut() {
        s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    }
    match next(&mut ws) {
        ServerMessage::Hello { role, .. } => (ws, role),
        m => panic!("expected hello, got {m:?}"),
    }
}

fn next(ws: &mut Ws) -> ServerMessage {
    loop {
        match ws.read().expect("server message") {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            _ => continue,
        }
    }
}

/// Reads until `f` accepts a snapshot or an error arrives, with a deadline.
fn until(ws: &mut Ws, mut f: impl FnMut(&StateSnapshot) -> bool) -> StateSnapshot {
    let deadline = Instant::now() + Duration::from_secs(30);
    while Instant::now() < deadline {
        if let ServerMessage::Snapshot(s) = next(ws) {
            if f(&s) {
                return *s;
            }
        }
    }
    panic!("condition not reached");
}

fn send(ws: &mut Ws, text: impl Into<String>) {
    ws.send(Message::text(text.into())).unwrap();
}

fn aim(p: [f64; 3]) -> String {
    let head = Scene::default_desk().head_position();
    let d = (nalgebra::Point3::from(p) - head).normalize();
    InputMessage::PointerRay {
        origin: head.coords.into(),
        direction: d.into(),
        on: true,
    }
    .to_wire()
}

#[test]
fn read_only_client_does_not_change_recording() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let s = Scenario::load(&dir.join("dwell_goal.json")).unwrap();
    let config = HubConfig {
        autostart: false,
        ..HubConfig::default()
    };
    let server = Server::start("127.0.0.1:0", Hub::new(s.clone(), config).unwrap(), fast()).unwrap();
    let (mut ctl, role) = connect(&server);
    assert_eq!(role, Role::Controller);
    let (mut obs, role) = connect(&server);
    assert_eq!(role, Role::Observer);
    send(&mut obs, aim([0.5, 0.0, 0.0]));
    send(&mut obs, "garbage");
    send(&mut ctl, r#"{"version":1,"type":"session_control","action":"start"}"#);
    let end = until(&mut obs, |s| s.state == SessionState::Finished);
    assert_eq!(end.scenario, "dwell_goal");
    let hub = server.shutdown();
    assert_eq!(hub.recording(), run(&s).unwrap());
}

#[test]
fn held_pointer_triggers_goal_over_the_wire() {
    let server = Server::start("127.0.0.1:0", Hub::new(live_scenario(), HubConfig::default()).unwrap(), fast()).unwrap();
    let (mut ws, _) = connect(&server);
    send(&mut ws, aim([0.55, 0.1, 0.0]));
    let mut progress = Vec::new();
    let mut last_t = -1.0;
    let exec = until(&mut ws, |s| {
        assert!(s.t > last_t, "time went backwards");
        last_t = s.t;
        if s.mode == "dwell_env" {
            progress.push(s.dwell_progress);
        }
        s.mode == "executing_trajectory"
    });
    assert!(progress.windows(2).all(|w| w[1] >= w[0]));
    assert!(progress[0] < 0.1 && *progress.last().unwrap() > 0.98, "{progress:?}");
    assert!(exec.laser_on);
    server.shutdown();
}

#[test]
fn malformed_message_gets_error_and_session_continues() {
    let server = Server::start("127.0.0.1:0", Hub::new(live_scenario(), HubConfig::default()).unwrap(), fast()).unwrap();
    let (mut ws, _) = connect(&server);
    let before = until(&mut ws, |_| true).tick;
    send(&mut ws, r#"{"version":1,"type":"pointer_ray","origin":[0,0,0],"direction":[0,0,3],"on":true}"#);
    let deadline = Instant::now() + Duration::from_secs(10);
    let err = loop {
        assert!(Instant::now() < deadline);
        if let ServerMessage::Error { message, .. } = next(&mut ws) {
            break message;
        }
    };
    assert!(err.contains("unit length"), "{err}");
    ws.send(Message::binary(vec![1u8, 2, 3])).unwrap();
    let err = loop {
        if let ServerMessage::Error { message, .. } = next(&mut ws) {
            break message;
        }
    };
    assert!(err.contains("binary"));
    let after = until(&mut ws, |s| s.tick > before + 10);
    assert_eq!(after.state, SessionState::Running);
    server.shutdown();
}

#[test]
fn controller_disconnect_turns_laser_off() {
    let server = Server::start("127.0.0.1:0", Hub::new(live_scenario(), HubConfig::default()).unwrap(), fast()).unwrap();
    let (mut ctl, _) = connect(&server);
    let (mut obs, _) = connect(&server);
    send(&mut ctl, aim([0.5, 0.0, 0.0]));
    until(&mut obs, |s| s.laser_on);
    ctl.close(None).unwrap();
    while ctl.read().is_ok() {}
    until(&mut obs, |s| !s.laser_on);
    let (_again, role) = connect(&server);
    assert_eq!(role, Role::Controller);
    let hub = server.shutdown();
    let rows = hub.recording().rows;
    let on = rows.iter().position(|r| r.input.laser.on).unwrap();
    assert!(rows[on..].iter().any(|r| !r.input.laser.on));
}

#[test]
fn ticks_without_clients() {
    let server = Server::start("127.0.0.1:0", Hub::new(live_scenario(), HubConfig::default()).unwrap(), fast()).unwrap();
    std::thread::sleep(Duration::from_millis(300));
    let hub = server.shutdown();
    let n = hub.recording().rows.len();
    assert!(n >= 20, "{n} ticks");
}

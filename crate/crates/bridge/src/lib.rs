//! Live bridge for the laser teleoperation simulator.
//!
//! A [`Hub`] owns the simulation and steps it once per tick. Network clients connect over
//! WebSocket ([`Server`]); the first becomes the controller, the rest are read-only observers.
//! Connection threads and the tick loop only exchange messages over bounded channels.

pub mod hub;
pub mod protocol;
pub mod server;

pub use hub::{live_scenario, ClientId, Hub, HubConfig, Inbound, Outgoing};
pub use protocol::{
    ControlAction, InputMessage, Joints, Role, ServerMessage, SessionState, StateSnapshot, WireError, WIRE_VERSION,
};
pub use server::{Server, ServerConfig};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] laser_teleop::error::Error),
    #[error("{0}")]
    Rejected(String),
    #[error("network: {0}")]
    Io(#[from] std::io::Error),
}

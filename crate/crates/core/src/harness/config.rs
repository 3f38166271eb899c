use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::imu::ImuConfig;
use crate::control::ControlConfig;
use crate::kinematics::JogParams;
use crate::perception::{DetectorKind, DEFAULT_BODY_MARGIN};
use crate::planning::PlanningConfig;
use crate::scene::{LaserBlob, DEFAULT_GRASP_RADIUS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub detector: DetectorKind,
    /// Chroma threshold on `R - max(G, B)`.
    pub threshold: u8,
    /// CSV of `stamp,u,v,confidence` rows, used by the external detector.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<PathBuf>,
    /// Largest stamp difference for a sidecar row to match a frame, s.
    pub sidecar_tolerance: f64,
    pub alpha: f64,
    pub n_miss: u32,
    pub blob: LaserBlob,
    pub body_margin: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            detector: DetectorKind::Chroma,
            threshold: 80,
            sidecar: None,
            sidecar_tolerance: 0.5 / 30.0,
            alpha: 0.4,
            n_miss: 5,
            blob: LaserBlob::default(),
            body_margin: DEFAULT_BODY_MARGIN,
        }
    }
}

/// How goal poses are turned into plans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecConfig {
    /// Lowest tcp goal height in base_link; bare-table goals are lifted to it, m.
    pub min_tcp_height: f64,
    /// Gap left under a carried object when the goal is a placement, m.
    pub place_clearance: f64,
    /// Joint speed below which the arm counts as stopped, rad/s.
    pub stop_speed: f64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            min_tcp_height: 0.02,
            place_clearance: 0.005,
            stop_speed: 1e-6,
        }
    }
}

/// Every tunable of a run. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub perception: PerceptionConfig,
    pub control: ControlConfig,
    pub planning: PlanningConfig,
    pub jog: JogParams,
    pub imu: ImuConfig,
    pub execution: ExecConfig,
    pub grasp_radius: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            perception: PerceptionConfig::default(),
            control: ControlConfig::default(),
            planning: PlanningConfig::default(),
            jog: JogParams::default(),
            imu: ImuConfig::default(),
            execution: ExecConfig::default(),
            grasp_radius: DEFAULT_GRASP_RADIUS,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let p = &self.perception;
        let c = &self.control;
        let checks = [
            (p.alpha > 0.0 && p.alpha <= 1.0, "perception.alpha must be in (0, 1]"),
            (p.sidecar_tolerance >= 0.0, "perception.sidecar_tolerance must be non-negative"),
            (p.body_margin >= 0.0, "perception.body_margin must be non-negative"),
            (c.env_dwell > 0.0 && c.button_dwell > 0.0, "dwell durations must be positive"),
            (c.env_radius > 0.0, "control.env_radius must be positive"),
            (c.linear_speed >= 0.0 && c.angular_speed >= 0.0, "jog speeds must be non-negative"),
            (self.planning.voxel_size > 0.0, "planning.voxel_size must be positive"),
            (self.imu.roll_hold > 0.0, "imu.roll_hold must be positive"),
            (self.imu.gain >= 0.0 && self.imu.deadband >= 0.0, "imu gain and deadband must be non-negative"),
            (self.grasp_radius > 0.0, "grasp_radius must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(crate::Error::invalid(msg));
            }
        }
        if p.detector == DetectorKind::External && p.sidecar.is_none() {
            return Err(crate::Error::invalid("the external detector needs perception.sidecar"));
        }
        Ok(())
    }
}

//! Region classification, dwell detection, keyboard semantics and command arbitration.

mod controller;
pub mod keyboard;

use std::fmt;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

pub use controller::Controller;
pub use keyboard::{Button, ButtonAction, KeyboardLayout};

use crate::geometry::{pose_serde, Aabb, Pose};
use crate::kinematics::Twist;
use crate::perception::LaserEstimate;
use crate::planning::PlanError;
use crate::scene::{GripperCommand, Keyboard};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// First in-region sample, fixed for the life of the dwell.
    First,
    /// Running mean of the dwell's samples.
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// Environment dwell duration, s.
    pub env_dwell: f64,
    /// Environment dwell radius, m.
    pub env_radius: f64,
    pub env_anchor: AnchorMode,
    /// Keyboard button dwell duration, s.
    pub button_dwell: f64,
    /// Linear jog speed, m/s.
    pub linear_speed: f64,
    /// Yaw jog speed about the tcp z axis, rad/s.
    pub angular_speed: f64,
    /// Largest distance from the keyboard plane still counted as a press, m.
    pub plane_tolerance: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            env_dwell: 3.0,
            env_radius: 0.04,
            env_anchor: AnchorMode::First,
            button_dwell: 1.0,
            linear_speed: 0.025,
            angular_speed: 0.25,
            plane_tolerance: 0.02,
        }
    }
}

/// Where the laser currently points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "button")]
pub enum Region {
    Keyboard(String),
    Environment,
    Outside,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Keyboard(id) => write!(f, "keyboard:{id}"),
            Region::Environment => f.write_str("environment"),
            Region::Outside => f.write_str("outside"),
        }
    }
}

/// Keyboard button under the laser if it lies on the panel plane, else environment when inside
/// `bounds`, else outside. Invalid estimates are outside.
pub fn classify(estimate: &LaserEstimate, keyboard: Option<&Keyboard>, bounds: &Aabb, plane_tolerance: f64) -> Region {
    let Some(p) = estimate.point() else {
        return Region::Outside;
    };
    if let Some(kb) = keyboard {
        let l = kb.local(&p);
        if l.z.abs() < plane_tolerance {
            if let Some(b) = kb.layout.button_at(l.x, l.y) {
                return Region::Keyboard(b.id.clone());
            }
        }
    }
    if bounds.contains(&p) {
        Region::Environment
    } else {
        Region::Outside
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RobotCommand {
    GoalPose {
        #[serde(with = "pose_serde")]
        pose: Pose,
    },
    CartesianVelocity {
        twist: Twist,
    },
    Gripper {
        action: GripperCommand,
    },
    Stop,
}

impl RobotCommand {
    pub fn name(&self) -> &'static str {
        match self {
            RobotCommand::GoalPose { .. } => "goal_pose",
            RobotCommand::CartesianVelocity { .. } => "cartesian_velocity",
            RobotCommand::Gripper { .. } => "gripper",
            RobotCommand::Stop => "stop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "button")]
pub enum DwellTarget {
    Environment,
    Button(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellState {
    pub target: DwellTarget,
    pub anchor: [f64; 3],
    pub entered_at: f64,
    pub required: f64,
    /// Radius of the spatial criterion; buttons use their rectangle instead and carry 0.
    pub radius: f64,
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "button")]
pub enum Mode {
    Idle,
    DwellEnv,
    DwellButton(String),
    ButtonHeld(String),
    ExecutingTrajectory,
    GripperActing,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Idle => f.write_str("idle"),
            Mode::DwellEnv => f.write_str("dwell_env"),
            Mode::DwellButton(id) => write!(f, "dwell_button:{id}"),
            Mode::ButtonHeld(id) => write!(f, "button_held:{id}"),
            Mode::ExecutingTrajectory => f.write_str("executing_trajectory"),
            Mode::GripperActing => f.write_str("gripper_acting"),
        }
    }
}

/// Outcomes reported back by the executor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "error", rename_all = "snake_case")]
pub enum Feedback {
    TrajectoryFinished,
    PlanRejected(PlanError),
    GripperFinished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlEvent {
    DwellStarted { target: DwellTarget },
    DwellReset { target: DwellTarget },
    DwellCompleted { target: DwellTarget },
    ButtonReleased { button: String },
    /// A keyboard command interrupted trajectory execution.
    Preempted,
    /// A new environment goal replaced the executing one.
    GoalReplaced,
    GoalRejected { error: PlanError },
    TrajectoryFinished,
    GripperFinished,
}

/// One tick of controller output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickOutput {
    pub command: Option<RobotCommand>,
    pub events: Vec<ControlEvent>,
}

pub(crate) fn distance(a: &[f64; 3], b: &Point3<f64>) -> f64 {
    (Point3::from(*a) - b).norm()
}

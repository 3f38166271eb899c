//! Head-orientation baseline: two-axis velocity control in a switchable Cartesian plane.

use std::fmt;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::kinematics::Twist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    /// Pitch drives z.
    Zy,
    /// Pitch drives x.
    Xy,
}

impl Plane {
    pub fn other(self) -> Plane {
        match self {
            Plane::Zy => Plane::Xy,
            Plane::Xy => Plane::Zy,
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Plane::Zy => "zy",
            Plane::Xy => "xy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuConfig {
    /// Linear speed per radian of displacement past the deadband, (m/s)/rad.
    pub gain: f64,
    /// rad
    pub deadband: f64,
    /// Lateral flexion (roll) beyond which the plane toggle starts timing, rad.
    pub roll_threshold: f64,
    /// s
    pub roll_hold: f64,
    /// Per-axis speed cap, m/s. Matches the keyboard jog speed.
    pub max_speed: f64,
    pub initial_plane: Plane,
}

impl Default for ImuConfig {
    fn default() -> Self {
        ImuConfig {
            gain: 0.15,
            deadband: 0.05,
            roll_threshold: 0.35,
            roll_hold: 1.0,
            max_speed: 0.025,
            initial_plane: Plane::Zy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuOutput {
    pub twist: Twist,
    /// Set on the tick the plane switched.
    pub toggled: Option<Plane>,
}

/// Maps head displacement from a neutral orientation to a tcp twist.
///
/// The neutral orientation is the first sample seen unless set explicitly. Yaw drives y, pitch
/// drives z or x depending on the plane, and holding a roll past the threshold flips the plane once
/// per gesture.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuBaseline {
    pub config: ImuConfig,
    rate: f64,
    neutral: Option<UnitQuaternion<f64>>,
    plane: Plane,
    roll_since: Option<u64>,
    /// Toggle already fired for the current gesture.
    spent: bool,
}

impl ImuBaseline {
    pub fn new(config: ImuConfig, rate: f64) -> Self {
        assert!(rate > 0.0, "tick rate must be positive");
        ImuBaseline {
            plane: config.initial_plane,
            config,
            rate,
            neutral: None,
            roll_since: None,
            spent: false,
        }
    }

    pub fn with_neutral(mut self, neutral: UnitQuaternion<f64>) -> Self {
        self.neutral = Some(neutral);
        self
    }

    pub fn plane(&self) -> Plane {
        self.plane
    }

    /// Roll, pitch and yaw of `head` relative to neutral.
    pub fn displacement(&self, head: &UnitQuaternion<f64>) -> (f64, f64, f64) {
        let n = self.neutral.unwrap_or(*head);
        (n.inverse() * head).euler_angles()
    }

    fn shaped(&self, angle: f64) -> f64 {
        let c = &self.config;
        let over = (angle.abs() - c.deadband).max(0.0);
        (angle.signum() * over * c.gain).clamp(-c.max_speed, c.max_speed)
    }

    /// One tick. `tick` must increase by one per call.
    pub fn update(&mut self, head: &UnitQuaternion<f64>, tick: u64) -> ImuOutput {
        if self.neutral.is_none() {
            self.neutral = Some(*head);
        }
        let (roll, pitch, yaw) = self.displacement(head);

        let mut toggled = None;
        if roll.abs() > self.config.roll_threshold {
            let since = *self.roll_since.get_or_insert(tick);
            let need = self.config.roll_hold * self.rate;
            if !self.spent && (tick - since) as f64 >= need - 1e-9 {
                self.plane = self.plane.other();
                self.spent = true;
                toggled = Some(self.plane);
            }
        } else {
            self.roll_since = None;
            self.spent = false;
        }

        let mut twist = Twist::default();
        twist.linear[1] = self.shaped(yaw);
        let v = self.shaped(pitch);
        match self.plane {
            Plane::Zy => twist.linear[2] = v,
            Plane::Xy => twist.linear[0] = v,
        }
        ImuOutput { twist, toggled }
    }
}

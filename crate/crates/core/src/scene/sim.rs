use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::render::scene_primitives;
use super::Scene;
use crate::geometry::{Pose, Ray};
use crate::kinematics::{fk, ArmModel, JointState, DOF};

/// Distance between the tool frame and an object's grasp point (its pose origin) below which
/// closing the gripper attaches the object.
pub const DEFAULT_GRASP_RADIUS: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCommand {
    Open,
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEvent {
    Attached { object: String },
    Released { object: String, position: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attachment {
    pub object: usize,
    /// Object pose in the tool frame, fixed at grasp time.
    pub relative: Pose,
    /// Aperture at which the fingers touch the object.
    pub contact: f64,
}

/// Mutable world state advanced by [`SimState::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub scene: Scene,
    pub joints: JointState,
    /// 1 = open, 0 = closed.
    pub gripper_target: f64,
    pub attached: Option<Attachment>,
    pub effort: f64,
    pub grasp_radius: f64,
}

impl SimState {
    pub fn new(scene: Scene, joints: JointState) -> Self {
        SimState {
            scene,
            gripper_target: if joints.gripper > 0.5 { 1.0 } else { 0.0 },
            joints,
            attached: None,
            effort: 0.0,
            grasp_radius: DEFAULT_GRASP_RADIUS,
        }
    }

    pub fn tcp(&self, model: &ArmModel) -> Pose {
        fk(model, &self.joints.q)
    }

    pub fn attached_indices(&self) -> Vec<usize> {
        self.attached.iter().map(|a| a.object).collect()
    }

    /// Advances one tick. Gripper commands act on the pose at the start of the tick; joint
    /// velocities are integrated explicitly and clamped to the limits.
    pub fn step(
        &mut self,
        model: &ArmModel,
        qdot: &[f64; DOF],
        gripper: Option<GripperCommand>,
        dt: f64,
    ) -> Vec<SimEvent> {
        assert!(dt > 0.0, "tick period must be positive");
        let mut events = Vec::new();
        match gripper {
            Some(GripperCommand::Close) => {
                self.gripper_target = 0.0;
                if self.attached.is_none() {
                    if let Some(ev) = self.try_attach(model) {
                        events.push(ev);
                    }
                }
            }
            Some(GripperCommand::Open) => {
                self.gripper_target = 1.0;
                if let Some(ev) = self.release() {
                    events.push(ev);
                }
            }
            None => {}
        }

        let mut q = self.joints.q;
        for i in 0..DOF {
            q[i] += qdot[i] * dt;
        }
        model.clamp(&mut q);
        self.joints.q = q;

        let rate = dt / model.gripper.travel_time;
        let floor = self.attached.map_or(0.0, |a| a.contact);
        let g = self.joints.gripper;
        self.joints.gripper = if self.gripper_target > g {
            (g + rate).min(self.gripper_target)
        } else {
            (g - rate).max(self.gripper_target.max(floor))
        };
        self.effort = match self.attached {
            Some(a) if self.gripper_target == 0.0 && self.joints.gripper <= a.contact => {
                model.gripper.effort_gain * a.contact
            }
            _ => 0.0,
        };
        self.joints.stamp += dt;

        if let Some(a) = self.attached {
            self.scene.objects[a.object].pose = fk(model, &self.joints.q) * a.relative;
        }
        events
    }

    fn try_attach(&mut self, model: &ArmModel) -> Option<SimEvent> {
        let tcp = fk(model, &self.joints.q);
        let tcp_p = Point3::from(tcp.translation.vector);
        let (idx, d) = self
            .scene
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.graspable)
            .map(|(i, o)| (i, (Point3::from(o.pose.translation.vector) - tcp_p).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        if d > self.grasp_radius {
            return None;
        }
        let o = &self.scene.objects[idx];
        let contact = (o.shape.grasp_width() / model.gripper.max_opening).clamp(0.0, 1.0);
        self.attached = Some(Attachment {
            object: idx,
            relative: tcp.inverse() * o.pose,
            contact: contact.min(self.joints.gripper),
        });
        Some(SimEvent::Attached {
            object: o.name.clone(),
        })
    }

    /// Detaches the held object and drops it straight down onto the highest support below it.
    fn release(&mut self) -> Option<SimEvent> {
        let a = self.attached.take()?;
        let obj = self.scene.objects[a.object].clone();
        let half = obj.shape.half_height();
        let start = Point3::from(obj.pose.translation.vector);
        let prims = scene_primitives(&self.scene, &[a.object]);
        let down = Ray {
            origin: start,
            dir: Vector3::new(0.0, 0.0, -1.0),
        };
        let support = prims
            .iter()
            .filter_map(|p| p.hit(&down).map(|(t, _)| t))
            .filter(|t| *t > 0.0)
            .fold(f64::INFINITY, f64::min);
        let mut pose = obj.pose;
        if support.is_finite() {
            pose.translation.vector.z = start.z - support + half;
        }
        self.scene.objects[a.object].pose = pose;
        let p = pose.translation.vector;
        Some(SimEvent::Released {
            object: obj.name,
            position: [p.x, p.y, p.z],
        })
    }
}

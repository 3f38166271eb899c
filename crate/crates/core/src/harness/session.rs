use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use super::config::{ExecConfig, RunConfig};
use super::imu::{ImuBaseline, Plane};
use super::scenario::{ControllerKind, Scenario};
use crate::control::{classify, ControlEvent, Controller, Feedback, KeyboardLayout, Region, RobotCommand};
use crate::error::Result;
use crate::geometry::{Pose, PoseDef};
use crate::kinematics::{joint_velocity, link_capsules, ArmModel, JointState, Twist, DOF};
use crate::perception::{
    filter_workspace, ChromaDetector, DetectorKind, ExternalDetector, LaserEstimate, Perception, Smoother,
    SpotDetector, WorkspaceBounds,
};
use crate::planning::{build_world, clear_attached, plan, Trajectory};
use crate::scene::{cast_laser_with, LaserRay, Renderer, Scene, SimEvent, SimState};

/// What the user does during one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickInput {
    pub laser: LaserRay,
    /// Head orientation quaternion `[x, y, z, w]` in base_link.
    pub head: [f64; 4],
}

impl TickInput {
    pub fn head_quaternion(&self) -> UnitQuaternion<f64> {
        let [x, y, z, w] = self.head;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImuEvent {
    PlaneToggled { plane: Plane },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Event {
    Control(ControlEvent),
    Sim(SimEvent),
    Imu(ImuEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub name: String,
    pub pose: PoseDef,
}

/// Everything observed during one tick. Robot and object state are taken at the start of the
/// tick, i.e. what the camera saw; `events` include what happened while stepping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRow {
    pub tick: u64,
    pub t: f64,
    pub input: TickInput,
    pub laser_hit: Option<[f64; 3]>,
    pub estimate: LaserEstimate,
    pub region: Region,
    pub mode: String,
    pub dwell_progress: f64,
    pub active_button: Option<String>,
    pub command: Option<RobotCommand>,
    pub q: [f64; DOF],
    pub gripper: f64,
    pub tcp: PoseDef,
    pub effort: f64,
    pub attached: Option<String>,
    pub objects: Vec<ObjectState>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone)]
struct Active {
    traj: Trajectory,
    start: f64,
}

/// The closed loop: render, perceive, decide, plan and step, once per tick.
pub struct Session {
    pub model: ArmModel,
    pub sim: SimState,
    pub config: RunConfig,
    kind: ControllerKind,
    controller: Controller,
    imu: ImuBaseline,
    renderer: Renderer,
    perception: Perception,
    rate: f64,
    tick: u64,
    seed: u64,
    active: Option<Active>,
    twist: Twist,
    plans: u64,
    gripper_busy: bool,
}

impl Session {
    pub fn new(scene: Scene, model: ArmModel, scenario: &Scenario) -> Result<Self> {
        let config = scenario.config.clone();
        config.validate()?;
        let rate = scene.camera.rate;
        let p = &config.perception;
        let detector: Box<dyn SpotDetector + Send> = match p.detector {
            DetectorKind::Chroma => Box::new(ChromaDetector::new(p.threshold)),
            DetectorKind::External => {
                let path = scenario.resolve(p.sidecar.as_deref().expect("validated"));
                Box::new(ExternalDetector::load(&path, p.sidecar_tolerance)?)
            }
        };
        let perception = Perception::new(detector, Smoother::new(p.alpha, p.n_miss));
        let layout = scene.keyboard.as_ref().map_or_else(KeyboardLayout::default_layout, |k| k.layout.clone());
        let mut joints = JointState::new(scenario.initial_q);
        joints.gripper = scenario.initial_gripper;
        let mut sim = SimState::new(scene, joints);
        sim.grasp_radius = config.grasp_radius;
        Ok(Session {
            controller: Controller::new(config.control.clone(), layout, rate),
            imu: ImuBaseline::new(config.imu, rate),
            renderer: Renderer::new(p.blob),
            perception,
            model,
            sim,
            kind: scenario.controller,
            config,
            rate,
            tick: 0,
            seed: scenario.seed,
            active: None,
            twist: Twist::default(),
            plans: 0,
            gripper_busy: false,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Index of the next tick.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 / self.rate
    }

    pub fn scene(&self) -> &Scene {
        &self.sim.scene
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        self.active.as_ref().map(|a| &a.traj)
    }

    fn gripper_done(&self) -> bool {
        let s = &self.sim;
        s.joints.gripper == s.gripper_target
            || s.attached.is_some_and(|a| s.gripper_target == 0.0 && s.joints.gripper <= a.contact)
    }

    /// Goal actually sent to the planner: carried objects are set down rather than pushed into
    /// the support, and nothing is planned below the minimum tcp height.
    fn adjust_goal(sim: &SimState, model: &ArmModel, ex: &ExecConfig, pose: &Pose) -> Pose {
        let mut goal = *pose;
        if let Some(a) = sim.attached {
            let o = &sim.scene.objects[a.object];
            let bottom = o.pose.translation.z - o.shape.half_height();
            let tcp_z = sim.tcp(model).translation.z;
            goal.translation.z += (tcp_z - bottom).max(0.0) + ex.place_clearance;
        }
        goal.translation.z = goal.translation.z.max(ex.min_tcp_height);
        goal
    }

    pub fn step(&mut self, input: &TickInput) -> TickRow {
        let dt = 1.0 / self.rate;
        let t = self.tick as f64 * dt;
        let mut events = Vec::new();

        if let Some(a) = &self.active {
            if t - a.start >= a.traj.duration() - 1e-9 {
                self.active = None;
                if self.kind == ControllerKind::Laser {
                    events.push(Event::Control(self.controller.feedback(Feedback::TrajectoryFinished)));
                }
            }
        }
        if self.gripper_busy && self.gripper_done() {
            self.gripper_busy = false;
            if self.controller.is_gripper_acting() {
                events.push(Event::Control(self.controller.feedback(Feedback::GripperFinished)));
            }
        }

        let q = self.sim.joints.q;
        let capsules = link_capsules(&self.model, &q);
        let laser_hit = if input.laser.on {
            cast_laser_with(&self.sim.scene, &input.laser, &capsules)
        } else {
            None
        };
        let moving = self.sim.attached_indices();
        let scene = &self.sim.scene;
        let frame = self.renderer.render_ref(scene, &capsules, &moving, laser_hit, t);
        let mut bounds = WorkspaceBounds::new(scene.workspace, capsules);
        bounds.body_margin = self.config.perception.body_margin;
        let estimate = self.perception.process(frame, &scene.camera, &bounds);
        let region = classify(&estimate, scene.keyboard.as_ref(), &scene.workspace, self.config.control.plane_tolerance);

        let command = match self.kind {
            ControllerKind::Laser => {
                let out = self.controller.update(&region, &estimate, self.tick);
                events.extend(out.events.into_iter().map(Event::Control));
                out.command
            }
            ControllerKind::ImuBaseline => {
                let out = self.imu.update(&input.head_quaternion(), self.tick);
                if let Some(plane) = out.toggled {
                    events.push(Event::Imu(ImuEvent::PlaneToggled { plane }));
                }
                if out.twist == self.twist {
                    None
                } else if out.twist.is_zero() {
                    Some(RobotCommand::Stop)
                } else {
                    Some(RobotCommand::CartesianVelocity { twist: out.twist })
                }
            }
        };
        let dwell_completed = events
            .iter()
            .any(|e| matches!(e, Event::Control(ControlEvent::DwellCompleted { .. })));
        let dwell_progress = if dwell_completed {
            1.0
        } else {
            self.controller.dwell().map_or(0.0, |d| d.progress)
        };

        let mut gripper_cmd = None;
        match &command {
            Some(RobotCommand::GoalPose { pose }) => {
                self.twist = Twist::default();
                self.active = None;
                let goal = Self::adjust_goal(&self.sim, &self.model, &self.config.execution, pose);
                let cloud = filter_workspace(&frame.cloud, &scene.camera, &bounds);
                let mut world = build_world(scene, &cloud, &scene.camera, &self.model, &q, &self.config.planning);
                if let Some(a) = self.sim.attached {
                    let o = &scene.objects[a.object];
                    clear_attached(&mut world, &o.shape, &o.pose);
                }
                let mut cfg = self.config.planning.clone();
                cfg.seed = self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ self.plans;
                self.plans += 1;
                match plan(&world, &self.model, &q, &goal, &cfg) {
                    Ok(traj) => self.active = Some(Active { traj, start: t }),
                    Err(e) => events.push(Event::Control(self.controller.feedback(Feedback::PlanRejected(e)))),
                }
            }
            Some(RobotCommand::CartesianVelocity { twist }) => {
                self.active = None;
                self.twist = *twist;
            }
            Some(RobotCommand::Gripper { action }) => {
                gripper_cmd = Some(*action);
                self.gripper_busy = true;
            }
            Some(RobotCommand::Stop) => {
                self.active = None;
                self.twist = Twist::default();
            }
            None => {}
        }

        let qdot: [f64; DOF] = if let Some(a) = &self.active {
            let target = a.traj.sample(t + dt - a.start);
            std::array::from_fn(|i| (target[i] - q[i]) / dt)
        } else {
            joint_velocity(&self.model, &q, &self.twist, &self.config.jog)
        };

        let mode = match self.kind {
            ControllerKind::Laser => self.controller.mode().to_string(),
            ControllerKind::ImuBaseline => format!("imu:{}", self.imu.plane()),
        };
        let scene = &self.sim.scene;
        let mut row = TickRow {
            tick: self.tick,
            t,
            input: *input,
            laser_hit: laser_hit.map(Into::into),
            estimate,
            region,
            mode,
            dwell_progress,
            active_button: self.controller.active_button().map(str::to_string),
            command,
            q,
            gripper: self.sim.joints.gripper,
            tcp: PoseDef::from(&self.sim.tcp(&self.model)),
            effort: self.sim.effort,
            attached: self.sim.attached.map(|a| scene.objects[a.object].name.clone()),
            objects: scene
                .objects
                .iter()
                .map(|o| ObjectState {
                    name: o.name.clone(),
                    pose: PoseDef::from(&o.pose),
                })
                .collect(),
            events,
        };
        let sim_events = self.sim.step(&self.model, &qdot, gripper_cmd, dt);
        row.events.extend(sim_events.into_iter().map(Event::Sim));
        self.tick += 1;
        row
    }
}

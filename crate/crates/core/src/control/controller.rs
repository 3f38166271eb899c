use nalgebra::Point3;

use super::{
    distance, AnchorMode, ControlConfig, ControlEvent, DwellState, DwellTarget, Feedback, KeyboardLayout, Mode,
    Region, RobotCommand, TickOutput,
};
use crate::kinematics::Twist;
use crate::perception::LaserEstimate;
use crate::planning::top_grasp_pose;
use crate::scene::GripperCommand;

#[derive(Debug, Clone, PartialEq)]
struct Dwell {
    state: DwellState,
    entered_tick: u64,
    sum: [f64; 3],
    samples: u32,
}

/// The main control state machine, stepped once per tick.
///
/// Time is counted in whole ticks so trigger instants do not depend on float accumulation. A dwell
/// that starts on tick `k` completes on the first tick `k + n` with `n / rate >= required`.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub config: ControlConfig,
    layout: KeyboardLayout,
    rate: f64,
    dwell: Option<Dwell>,
    held: Option<String>,
    /// Gripper button that fired and has not been left yet.
    latched: Option<String>,
    /// Point of the last environment trigger; no new environment dwell starts until the laser
    /// leaves its radius.
    rearm: Option<[f64; 3]>,
    executing: bool,
    gripper_acting: bool,
    pending: Option<RobotCommand>,
}

impl Controller {
    pub fn new(config: ControlConfig, layout: KeyboardLayout, rate: f64) -> Self {
        assert!(rate > 0.0, "tick rate must be positive");
        Controller {
            config,
            layout,
            rate,
            dwell: None,
            held: None,
            latched: None,
            rearm: None,
            executing: false,
            gripper_acting: false,
            pending: None,
        }
    }

    pub fn mode(&self) -> Mode {
        if let Some(id) = &self.held {
            return Mode::ButtonHeld(id.clone());
        }
        if self.executing {
            return Mode::ExecutingTrajectory;
        }
        if self.gripper_acting {
            return Mode::GripperActing;
        }
        match self.dwell.as_ref().map(|d| &d.state.target) {
            Some(DwellTarget::Environment) => Mode::DwellEnv,
            Some(DwellTarget::Button(id)) => Mode::DwellButton(id.clone()),
            None => Mode::Idle,
        }
    }

    pub fn dwell(&self) -> Option<&DwellState> {
        self.dwell.as_ref().map(|d| &d.state)
    }

    /// Button being dwelt on or held.
    pub fn active_button(&self) -> Option<&str> {
        if let Some(id) = &self.held {
            return Some(id);
        }
        match self.dwell.as_ref().map(|d| &d.state.target) {
            Some(DwellTarget::Button(id)) => Some(id),
            _ => None,
        }
    }

    pub fn is_executing(&self) -> bool {
        self.executing
    }

    pub fn is_gripper_acting(&self) -> bool {
        self.gripper_acting
    }

    pub fn feedback(&mut self, fb: Feedback) -> ControlEvent {
        match fb {
            Feedback::TrajectoryFinished => {
                self.executing = false;
                ControlEvent::TrajectoryFinished
            }
            Feedback::PlanRejected(error) => {
                self.executing = false;
                ControlEvent::GoalRejected { error }
            }
            Feedback::GripperFinished => {
                self.gripper_acting = false;
                ControlEvent::GripperFinished
            }
        }
    }

    /// Advances one tick. `tick` must increase by one per call.
    pub fn update(&mut self, region: &Region, estimate: &LaserEstimate, tick: u64) -> TickOutput {
        let mut out = TickOutput::default();
        if let Some(cmd) = self.pending.take() {
            out.command = Some(cmd);
        }

        if let Some(id) = self.held.clone() {
            if matches!(region, Region::Keyboard(r) if *r == id) {
                if out.command.is_none() {
                    out.command = Some(self.velocity(&id));
                }
                return out;
            }
            self.held = None;
            out.events.push(ControlEvent::ButtonReleased { button: id });
            self.emit(&mut out, RobotCommand::Stop);
        }
        if let Some(id) = &self.latched {
            if !matches!(region, Region::Keyboard(r) if r == id) {
                self.latched = None;
            }
        }
        if let Some(a) = self.rearm {
            let inside = matches!((region, estimate.point()), (Region::Environment, Some(p)) if distance(&a, &p) <= self.config.env_radius);
            if !inside {
                self.rearm = None;
            }
        }

        match region {
            Region::Outside => self.reset(&mut out),
            Region::Keyboard(id) => self.keyboard(id, estimate, tick, &mut out),
            Region::Environment => match estimate.point() {
                Some(p) => self.environment(p, tick, &mut out),
                None => self.reset(&mut out),
            },
        }
        out
    }

    fn emit(&mut self, out: &mut TickOutput, cmd: RobotCommand) {
        if out.command.is_some() {
            self.pending = Some(cmd);
        } else {
            out.command = Some(cmd);
        }
    }

    fn reset(&mut self, out: &mut TickOutput) {
        if let Some(d) = self.dwell.take() {
            out.events.push(ControlEvent::DwellReset { target: d.state.target });
        }
    }

    fn start(&mut self, target: DwellTarget, p: Point3<f64>, tick: u64, out: &mut TickOutput) {
        let (required, radius) = match target {
            DwellTarget::Environment => (self.config.env_dwell, self.config.env_radius),
            DwellTarget::Button(_) => (self.config.button_dwell, 0.0),
        };
        out.events.push(ControlEvent::DwellStarted { target: target.clone() });
        self.dwell = Some(Dwell {
            state: DwellState {
                target,
                anchor: p.into(),
                entered_at: tick as f64 / self.rate,
                required,
                radius,
                progress: 0.0,
            },
            entered_tick: tick,
            sum: p.into(),
            samples: 1,
        });
    }

    /// Updates progress and reports completion, clearing the dwell.
    fn advance(&mut self, tick: u64, out: &mut TickOutput) -> bool {
        let d = self.dwell.as_mut().expect("active dwell");
        let need = d.state.required * self.rate;
        let elapsed = (tick - d.entered_tick) as f64;
        if elapsed >= need - 1e-9 {
            d.state.progress = 1.0;
            let target = d.state.target.clone();
            self.dwell = None;
            out.events.push(ControlEvent::DwellCompleted { target });
            return true;
        }
        d.state.progress = (elapsed / need).clamp(0.0, 1.0);
        false
    }

    fn keyboard(&mut self, id: &str, estimate: &LaserEstimate, tick: u64, out: &mut TickOutput) {
        let same = matches!(self.dwell.as_ref().map(|d| &d.state.target), Some(DwellTarget::Button(b)) if b == id);
        if !same {
            self.reset(out);
        }
        if self.latched.as_deref() == Some(id) {
            return;
        }
        if self.dwell.is_none() {
            let p = estimate.point().unwrap_or(Point3::origin());
            self.start(DwellTarget::Button(id.to_string()), p, tick, out);
        }
        if !self.advance(tick, out) {
            return;
        }
        let Some(action) = self.layout.button(id).map(|b| b.action) else {
            return;
        };
        if self.executing {
            self.executing = false;
            out.events.push(ControlEvent::Preempted);
            self.emit(out, RobotCommand::Stop);
        }
        if action.is_gripper() {
            self.latched = Some(id.to_string());
            self.gripper_acting = true;
            let action = if action == super::ButtonAction::GripOpen {
                GripperCommand::Open
            } else {
                GripperCommand::Close
            };
            self.emit(out, RobotCommand::Gripper { action });
        } else {
            self.held = Some(id.to_string());
            self.gripper_acting = false;
            // After a preemption the held state sends the first velocity next tick.
            if out.command.is_none() {
                out.command = Some(self.velocity(id));
            }
        }
    }

    fn environment(&mut self, p: Point3<f64>, tick: u64, out: &mut TickOutput) {
        if !matches!(self.dwell.as_ref().map(|d| &d.state.target), None | Some(DwellTarget::Environment)) {
            self.reset(out);
        }
        if self.rearm.is_some() {
            return;
        }
        match self.dwell.as_mut() {
            Some(d) if distance(&d.state.anchor, &p) > self.config.env_radius => {
                self.reset(out);
                self.start(DwellTarget::Environment, p, tick, out);
            }
            Some(d) => {
                if self.config.env_anchor == AnchorMode::Centroid {
                    d.samples += 1;
                    for i in 0..3 {
                        d.sum[i] += p[i];
                        d.state.anchor[i] = d.sum[i] / d.samples as f64;
                    }
                }
            }
            None => self.start(DwellTarget::Environment, p, tick, out),
        }
        if !self.advance(tick, out) {
            return;
        }
        if self.executing {
            out.events.push(ControlEvent::GoalReplaced);
        }
        self.executing = true;
        self.gripper_acting = false;
        self.rearm = Some(p.into());
        self.emit(out, RobotCommand::GoalPose { pose: top_grasp_pose(&p) });
    }

    fn velocity(&self, id: &str) -> RobotCommand {
        let mut twist = Twist::default();
        if let Some((axis, sign)) = self.layout.button(id).and_then(|b| b.action.axis()) {
            match axis {
                Some(i) => twist.linear[i] = sign * self.config.linear_speed,
                None => twist.angular[2] = sign * self.config.angular_speed,
            }
        }
        RobotCommand::CartesianVelocity { twist }
    }
}

use nalgebra::{Point3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::scenario::{Scenario, Success, Target};
use super::session::TickRow;
use crate::kinematics::DOF;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub name: String,
    /// Closest tcp stop to the target; absent if the tcp never came to rest after moving.
    pub err_mm: Option<f64>,
    pub reached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub complete: bool,
    /// Completion time, or the time of the last command or event when incomplete, s.
    pub time_s: f64,
    pub targets: Vec<TargetResult>,
    /// Integrated head rotation, rad.
    pub mov_rad: f64,
}

/// Total rotation angle along an orientation stream. With the stream sampled once per tick this
/// is the integral of the head angular speed.
pub fn mov_rad(stream: &[UnitQuaternion<f64>]) -> f64 {
    stream.windows(2).map(|w| w[0].angle_to(&w[1])).sum()
}

/// Flags the first sample at rest after a stretch of motion.
#[derive(Debug, Clone)]
pub struct StopDetector {
    /// Largest per-sample joint change (infinity norm) still counted as rest, rad.
    pub eps: f64,
    prev: Option<[f64; DOF]>,
    moving: bool,
}

impl StopDetector {
    pub fn new(eps: f64) -> Self {
        StopDetector {
            eps,
            prev: None,
            moving: false,
        }
    }

    pub fn update(&mut self, q: &[f64; DOF]) -> bool {
        let mut stop = false;
        if let Some(p) = self.prev {
            let d = (0..DOF).map(|i| (q[i] - p[i]).abs()).fold(0.0, f64::max);
            let moving = d > self.eps;
            stop = self.moving && !moving;
            self.moving = moving;
        }
        self.prev = Some(*q);
        stop
    }
}

/// Evaluates a scenario's success criterion row by row.
#[derive(Debug, Clone)]
pub struct TaskTracker {
    targets: Vec<Target>,
    success: Option<Success>,
    stops: StopDetector,
    /// Closest stop distance per target, m.
    best: Vec<Option<f64>>,
    pub completed_at: Option<f64>,
}

impl TaskTracker {
    pub fn new(scenario: &Scenario, rate: f64) -> Self {
        TaskTracker {
            targets: scenario.targets.clone(),
            success: scenario.success.clone(),
            stops: StopDetector::new(scenario.config.execution.stop_speed / rate),
            best: vec![None; scenario.targets.len()],
            completed_at: None,
        }
    }

    /// Feeds one row; true once the task is complete.
    pub fn update(&mut self, row: &TickRow) -> bool {
        if self.stops.update(&row.q) {
            let tcp = Point3::from(row.tcp.position);
            for (b, target) in self.best.iter_mut().zip(&self.targets) {
                let d = (tcp - Point3::from(target.position)).norm();
                *b = Some(b.map_or(d, |x: f64| x.min(d)));
            }
        }
        if self.completed_at.is_some() {
            return true;
        }
        let done = match &self.success {
            None => false,
            Some(Success::ReachTargets) => self.reached().iter().all(|r| *r),
            Some(Success::ObjectInRegion { object, region }) => {
                row.attached.as_deref() != Some(object.as_str())
                    && row
                        .objects
                        .iter()
                        .find(|o| &o.name == object)
                        .is_some_and(|o| region.contains(&Point3::from(o.pose.position)))
            }
        };
        if done {
            self.completed_at = Some(row.t);
        }
        done
    }

    fn reached(&self) -> Vec<bool> {
        self.best
            .iter()
            .zip(&self.targets)
            .map(|(b, t)| b.is_some_and(|d| d <= t.radius))
            .collect()
    }

    pub fn targets(&self) -> Vec<TargetResult> {
        self.best
            .iter()
            .zip(&self.targets)
            .zip(self.reached())
            .map(|((b, t), reached)| TargetResult {
                name: t.name.clone(),
                err_mm: b.map(|d| d * 1000.0),
                reached,
            })
            .collect()
    }
}

/// Metrics of a finished run. A scenario without a success criterion is complete once its rows
/// cover the whole time limit.
pub fn compute(scenario: &Scenario, rows: &[TickRow], rate: f64) -> Metrics {
    let mut tracker = TaskTracker::new(scenario, rate);
    for row in rows {
        if tracker.update(row) {
            break;
        }
    }
    let full_length = rows.len() as u64 > scenario.ticks(rate);
    let complete = match scenario.success {
        Some(_) => tracker.completed_at.is_some(),
        None => full_length,
    };
    let last_event = rows
        .iter()
        .rev()
        .find(|r| r.command.is_some() || !r.events.is_empty())
        .map_or(0.0, |r| r.t);
    let heads: Vec<_> = rows.iter().map(|r| r.input.head_quaternion()).collect();
    Metrics {
        complete,
        time_s: tracker.completed_at.unwrap_or(last_event),
        targets: tracker.targets(),
        mov_rad: mov_rad(&heads),
    }
}

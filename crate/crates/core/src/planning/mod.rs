//! Collision world assembly and collision-free joint trajectories to Cartesian goals.

mod world;

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{Point3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use world::{build_world, CollisionWorld, VoxelGrid, WorldBox, CLEARANCE_CAP};

use crate::geometry::{Pose, Shape};
use crate::kinematics::{ik, ArmModel, IkParams, DOF};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanningConfig {
    pub voxel_size: f64,
    /// Inflation of occupied voxels, m.
    pub margin: f64,
    /// Voxels within this distance of the goal point are cleared before planning, m.
    pub goal_clear_radius: f64,
    /// Cloud points this close to a static box are attributed to it, m.
    pub box_tolerance: f64,
    /// Extra clearing around the arm's own links beyond `margin`, m.
    pub self_clear_pad: f64,
    /// RRT extension step, rad.
    pub step: f64,
    pub max_samples: usize,
    pub shortcut_attempts: usize,
    /// Upper bound on joint-space spacing of edge collision checks, rad.
    pub edge_resolution: f64,
    pub ik_restarts: usize,
    /// Smallest clearance accepted along a path, m.
    pub min_clearance: f64,
    pub seed: u64,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        PlanningConfig {
            voxel_size: 0.02,
            margin: 0.01,
            goal_clear_radius: 0.06,
            box_tolerance: 0.005,
            self_clear_pad: 0.01,
            step: 0.1,
            max_samples: 20_000,
            shortcut_attempts: 100,
            edge_resolution: 0.02,
            ik_restarts: 10,
            min_clearance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanError {
    #[error("goal pose is outside the reachable workspace")]
    IkUnreachable,
    #[error("no collision-free path found")]
    NoPathFound,
    #[error("planning cancelled")]
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub q: [f64; DOF],
}

/// Piecewise-linear joint trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.t)
    }

    pub fn last(&self) -> [f64; DOF] {
        self.waypoints.last().expect("trajectory is never empty").q
    }

    /// Joint positions at time `t`, held at the ends.
    pub fn sample(&self, t: f64) -> [f64; DOF] {
        let w = &self.waypoints;
        if t <= w[0].t {
            return w[0].q;
        }
        let i = w.partition_point(|p| p.t <= t);
        if i >= w.len() {
            return w[w.len() - 1].q;
        }
        let (a, b) = (&w[i - 1], &w[i]);
        let s = (t - a.t) / (b.t - a.t);
        std::array::from_fn(|k| a.q[k] + (b.q[k] - a.q[k]) * s)
    }
}

/// Fixed top-grasp orientation: tcp z along base −z, tcp x along base x.
pub fn top_grasp_orientation(_goal_point: &Point3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(std::f64::consts::PI, 0.0, 0.0)
}

pub fn top_grasp_pose(goal_point: &Point3<f64>) -> Pose {
    Pose::from_parts(goal_point.coords.into(), top_grasp_orientation(goal_point))
}

fn dist_inf(a: &[f64; DOF], b: &[f64; DOF]) -> f64 {
    (0..DOF).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
}

fn dist2(a: &[f64; DOF], b: &[f64; DOF]) -> f64 {
    (0..DOF).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn lerp(a: &[f64; DOF], b: &[f64; DOF], s: f64) -> [f64; DOF] {
    std::array::from_fn(|i| a[i] + (b[i] - a[i]) * s)
}

/// Smallest joint step taken by the edge check, rad.
const MIN_EDGE_STEP: f64 = 1e-3;

/// Collision queries with conservative continuous checking.
struct Checker<'a> {
    world: &'a CollisionWorld,
    model: &'a ArmModel,
    cfg: &'a PlanningConfig,
}

impl Checker<'_> {
    fn clearance(&self, q: &[f64; DOF]) -> f64 {
        self.world.clearance(self.model, q)
    }

    /// Clearance needed for the edge check to take its smallest step from `q`.
    fn required(&self) -> f64 {
        self.cfg.min_clearance + 2.0 * self.model.motion_bound * MIN_EDGE_STEP
    }

    fn valid(&self, q: &[f64; DOF]) -> bool {
        self.clearance(q) >= self.required()
    }

    /// Walks the segment with steps no larger than `edge_resolution` and no larger than the
    /// local clearance allows: any capsule point moves at most `motion_bound * dq_inf`, and two
    /// capsules approach each other at most twice that, so the whole segment stays free.
    fn edge_valid(&self, a: &[f64; DOF], b: &[f64; DOF]) -> bool {
        let len = dist_inf(a, b);
        if len == 0.0 {
            return self.valid(a);
        }
        let mut s = 0.0;
        loop {
            let q = lerp(a, b, s);
            let c = self.clearance(&q);
            // Grazing an obstacle would shrink the step without bound.
            if c < self.required() {
                return false;
            }
            if s >= 1.0 {
                return true;
            }
            let step = ((c - self.cfg.min_clearance) / (2.0 * self.model.motion_bound)).min(self.cfg.edge_resolution);
            s = (s + step / len).min(1.0);
        }
    }
}

struct Tree {
    nodes: Vec<[f64; DOF]>,
    parent: Vec<usize>,
}

impl Tree {
    fn new(root: [f64; DOF]) -> Self {
        Tree {
            nodes: vec![root],
            parent: vec![usize::MAX],
        }
    }

    fn nearest(&self, q: &[f64; DOF]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = dist2(n, q);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    fn add(&mut self, q: [f64; DOF], parent: usize) -> usize {
        self.nodes.push(q);
        self.parent.push(parent);
        self.nodes.len() - 1
    }

    fn path_to_root(&self, mut i: usize) -> Vec<[f64; DOF]> {
        let mut out = Vec::new();
        while i != usize::MAX {
            out.push(self.nodes[i]);
            i = self.parent[i];
        }
        out
    }
}

enum Extend {
    Reached(usize),
    Advanced(usize),
    Trapped,
}

fn extend(tree: &mut Tree, target: &[f64; DOF], step: f64, check: &Checker) -> Extend {
    let near = tree.nearest(target);
    let from = tree.nodes[near];
    let d = dist2(&from, target).sqrt();
    let (to, reached) = if d <= step {
        (*target, true)
    } else {
        (lerp(&from, target, step / d), false)
    };
    if !check.edge_valid(&from, &to) {
        return Extend::Trapped;
    }
    let id = tree.add(to, near);
    if reached {
        Extend::Reached(id)
    } else {
        Extend::Advanced(id)
    }
}

fn connect(tree: &mut Tree, target: &[f64; DOF], step: f64, check: &Checker) -> Extend {
    loop {
        match extend(tree, target, step, check) {
            Extend::Advanced(_) => continue,
            other => return other,
        }
    }
}

fn rrt_connect(
    start: [f64; DOF],
    goal: [f64; DOF],
    check: &Checker,
    rng: &mut ChaCha8Rng,
    cancel: Option<&AtomicBool>,
) -> Result<Vec<[f64; DOF]>, PlanError> {
    if check.edge_valid(&start, &goal) {
        return Ok(vec![start, goal]);
    }
    let (lo, hi) = (check.model.lower(), check.model.upper());
    let mut a = Tree::new(start);
    let mut b = Tree::new(goal);
    let mut a_is_start = true;
    for _ in 0..check.cfg.max_samples {
        if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Err(PlanError::Cancelled);
        }
        let sample: [f64; DOF] = std::array::from_fn(|i| rng.gen_range(lo[i]..=hi[i]));
        let new = match extend(&mut a, &sample, check.cfg.step, check) {
            Extend::Trapped => None,
            Extend::Reached(i) | Extend::Advanced(i) => Some(i),
        };
        if let Some(ia) = new {
            let qa = a.nodes[ia];
            if let Extend::Reached(ib) = connect(&mut b, &qa, check.cfg.step, check) {
                let mut pa = a.path_to_root(ia);
                let pb = b.path_to_root(ib);
                pa.reverse();
                // pa ends at qa, pb starts at the same configuration.
                pa.extend(pb.into_iter().skip(1));
                if !a_is_start {
                    pa.reverse();
                }
                return Ok(pa);
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    Err(PlanError::NoPathFound)
}

fn shortcut(path: &mut Vec<[f64; DOF]>, check: &Checker, rng: &mut ChaCha8Rng) {
    for _ in 0..check.cfg.shortcut_attempts {
        if path.len() < 3 {
            return;
        }
        let i = rng.gen_range(0..path.len() - 2);
        let j = rng.gen_range(i + 2..path.len());
        if check.edge_valid(&path[i], &path[j]) {
            path.drain(i + 1..j);
        }
    }
}

/// Times each segment so the slowest joint moves at its velocity limit.
pub fn time_parameterize(model: &ArmModel, path: &[[f64; DOF]]) -> Trajectory {
    let mut waypoints = vec![Waypoint { t: 0.0, q: path[0] }];
    for q in &path[1..] {
        let prev = waypoints.last().expect("non-empty");
        let dt = (0..DOF)
            .map(|i| (q[i] - prev.q[i]).abs() / model.joints[i].max_velocity)
            .fold(0.0, f64::max);
        if dt > 0.0 {
            waypoints.push(Waypoint { t: prev.t + dt, q: *q });
        }
    }
    Trajectory { waypoints }
}

/// Goal configuration: IK seeded at `q_start`, then at seeded random restarts, keeping the first
/// collision-free solution.
fn goal_configuration(
    check: &Checker,
    q_start: &[f64; DOF],
    goal: &Pose,
    rng: &mut ChaCha8Rng,
) -> Result<[f64; DOF], PlanError> {
    let (lo, hi) = (check.model.lower(), check.model.upper());
    let params = IkParams::default();
    let mut any = false;
    for attempt in 0..=check.cfg.ik_restarts {
        let seed: [f64; DOF] = if attempt == 0 {
            *q_start
        } else {
            std::array::from_fn(|i| rng.gen_range(lo[i]..=hi[i]))
        };
        if let Ok(sol) = ik(check.model, goal, &seed, &params) {
            any = true;
            if check.valid(&sol.q) {
                return Ok(sol.q);
            }
        }
    }
    Err(if any {
        PlanError::NoPathFound
    } else {
        PlanError::IkUnreachable
    })
}

/// Plans from `q_start` to a tcp pose. Voxels near the goal point are cleared first, since the
/// pointed object itself occupies the goal.
pub fn plan(
    world: &CollisionWorld,
    model: &ArmModel,
    q_start: &[f64; DOF],
    goal: &Pose,
    config: &PlanningConfig,
) -> Result<Trajectory, PlanError> {
    plan_with_cancel(world, model, q_start, goal, config, None)
}

pub fn plan_with_cancel(
    world: &CollisionWorld,
    model: &ArmModel,
    q_start: &[f64; DOF],
    goal: &Pose,
    config: &PlanningConfig,
    cancel: Option<&AtomicBool>,
) -> Result<Trajectory, PlanError> {
    let mut world = world.clone();
    world
        .occupancy
        .clear_sphere(&Point3::from(goal.translation.vector), config.goal_clear_radius);
    let check = Checker {
        world: &world,
        model,
        cfg: config,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if !check.valid(q_start) {
        return Err(PlanError::NoPathFound);
    }
    let q_goal = goal_configuration(&check, q_start, goal, &mut rng)?;
    if dist_inf(q_start, &q_goal) == 0.0 {
        return Ok(Trajectory {
            waypoints: vec![Waypoint { t: 0.0, q: *q_start }],
        });
    }
    let mut path = rrt_connect(*q_start, q_goal, &check, &mut rng, cancel)?;
    shortcut(&mut path, &check, &mut rng);
    Ok(time_parameterize(model, &path))
}

/// Clears voxels around an object carried by the gripper so it does not block the arm.
pub fn clear_attached(world: &mut CollisionWorld, shape: &Shape, pose: &Pose) {
    let c = Point3::from(pose.translation.vector);
    let r = shape.bounding_radius() + world.margin + world.occupancy.resolution;
    world.occupancy.clear_sphere(&c, r);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::fk;
    use crate::scene::{OrganizedCloud, Scene};

    fn desk_world() -> (ArmModel, Scene, CollisionWorld) {
        let model = ArmModel::default_arm();
        let scene = Scene::default_desk();
        let world = build_world(
            &scene,
            &OrganizedCloud::new_invalid(1, 1),
            &scene.camera,
            &model,
            &[0.0; DOF],
            &PlanningConfig::default(),
        );
        (model, scene, world)
    }

    #[test]
    fn top_grasp_is_constant_and_points_down() {
        let a = top_grasp_orientation(&Point3::new(0.1, 0.2, 0.3));
        let b = top_grasp_orientation(&Point3::new(-0.5, 0.9, 0.0));
        assert_eq!(a, b);
        let z = a * nalgebra::Vector3::z();
        assert!((z + nalgebra::Vector3::z()).norm() < 1e-9);
        let x = a * nalgebra::Vector3::x();
        assert!((x - nalgebra::Vector3::x()).norm() < 1e-9);
    }

    #[test]
    fn goal_at_start_is_single_waypoint() {
        let (model, _, world) = desk_world();
        let q = [0.1, 0.3, -0.4, 0.0, 0.3, 0.0];
        let t = plan(&world, &model, &q, &fk(&model, &q), &PlanningConfig::default()).unwrap();
        assert_eq!(t.waypoints.len(), 1);
        assert_eq!(t.waypoints[0].q, q);
    }

    #[test]
    fn goal_inside_table_rejected() {
        let (model, _, world) = desk_world();
        let cfg = PlanningConfig::default();
        let goal = top_grasp_pose(&Point3::new(0.45, 0.1, -0.03));
        assert_eq!(plan(&world, &model, &[0.0; DOF], &goal, &cfg).unwrap_err(), PlanError::NoPathFound);
        let far = top_grasp_pose(&Point3::new(2.0, 0.0, 0.1));
        assert_eq!(plan(&world, &model, &[0.0; DOF], &far, &cfg).unwrap_err(), PlanError::IkUnreachable);
    }

    #[test]
    fn reaches_goal_at_speed_limits() {
        let (model, _, world) = desk_world();
        let goal = top_grasp_pose(&Point3::new(0.5, 0.15, 0.04));
        let cfg = PlanningConfig::default();
        let t = plan(&world, &model, &[0.0; DOF], &goal, &cfg).unwrap();
        let end = fk(&model, &t.last());
        assert!((end.translation.vector - goal.translation.vector).norm() < 5e-3);
        for w in t.waypoints.windows(2) {
            assert!(w[1].t > w[0].t);
            for i in 0..DOF {
                let v = (w[1].q[i] - w[0].q[i]).abs() / (w[1].t - w[0].t);
                assert!(v <= model.joints[i].max_velocity + 1e-9);
            }
        }
        assert_eq!(plan(&world, &model, &[0.0; DOF], &goal, &cfg).unwrap(), t);
    }

    #[test]
    fn cancel_flag_stops_search() {
        let (model, _, mut world) = desk_world();
        // A wall between start and goal forces sampling.
        world.add_box("wall", Pose::translation(0.45, 0.0, 0.25), [0.02, 0.5, 0.5]);
        let flag = AtomicBool::new(true);
        let goal = top_grasp_pose(&Point3::new(0.7, 0.0, 0.1));
        let r = plan_with_cancel(&world, &model, &[0.0, 0.2, -1.2, 0.0, 0.9, 0.0], &goal, &PlanningConfig::default(), Some(&flag));
        assert!(matches!(r, Err(PlanError::Cancelled) | Err(PlanError::NoPathFound)));
    }
}

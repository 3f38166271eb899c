#![allow(dead_code)]

use std::time::Instant;

use laser_teleop::geometry::{rotation_error, Pose, Shape};
use laser_teleop::kinematics::{fk, jacobian, link_capsules, ArmModel, DOF};
use laser_teleop::perception::{filter_workspace, pixel_to_point, to_base, ChromaDetector, SpotDetector, WorkspaceBounds};
use laser_teleop::planning::{build_world, plan, top_grasp_pose, CollisionWorld, PlanningConfig, Trajectory};
use laser_teleop::scene::{cast_laser_with, LaserRay, Renderer, Scene, SceneObject};
use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Desk scene with the default objects replaced by 1..=5 random primitives in the work area.
pub fn random_scene<R: Rng>(rng: &mut R) -> Scene {
    let mut scene = Scene::default_desk();
    scene.objects.clear();
    let area = scene.work_area.unwrap();
    let n = rng.gen_range(1..=5);
    for i in 0..n {
        let shape = match rng.gen_range(0..3) {
            0 => Shape::Box {
                size: [rng.gen_range(0.03..0.12), rng.gen_range(0.03..0.12), rng.gen_range(0.02..0.15)],
            },
            1 => Shape::Sphere {
                radius: rng.gen_range(0.02..0.06),
            },
            _ => Shape::Cylinder {
                radius: rng.gen_range(0.02..0.05),
                height: rng.gen_range(0.03..0.18),
            },
        };
        let x = rng.gen_range(area.min[0]..area.max[0]);
        let y = rng.gen_range(area.min[1]..area.max[1]);
        let yaw = rng.gen_range(-3.1..3.1);
        scene.objects.push(SceneObject {
            name: format!("obj{i}"),
            shape,
            pose: Pose::from_parts(
                nalgebra::Translation3::new(x, y, shape.half_height()),
                UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
            ),
            graspable: true,
            color: Some({
                let (g, b) = (rng.gen_range(60..200u8), rng.gen_range(60..200u8));
                [rng.gen_range(40..g.max(b) as u16 + 79).min(255) as u8, g, b]
            }),
        });
    }
    scene
}

pub fn random_q<R: Rng>(rng: &mut R, model: &ArmModel) -> [f64; DOF] {
    let (lo, hi) = (model.lower(), model.upper());
    std::array::from_fn(|i| rng.gen_range(lo[i]..hi[i]))
}

/// True when the camera has a clear line of sight to `hit`.
pub fn camera_sees(scene: &Scene, arm: &[laser_teleop::geometry::Capsule], hit: &Point3<f64>) -> bool {
    let origin = scene.camera.origin();
    let ray = LaserRay::towards(origin, *hit);
    match cast_laser_with(scene, &ray, arm) {
        Some(p) => (p - hit).norm() < 1e-6,
        None => false,
    }
}

pub fn random_aim<R: Rng>(rng: &mut R, scene: &Scene) -> Point3<f64> {
    let ws = scene.workspace;
    Point3::new(
        rng.gen_range(ws.min[0] + 0.1..ws.max[0] - 0.1),
        rng.gen_range(ws.min[1] + 0.1..ws.max[1] - 0.05),
        rng.gen_range(0.0..0.1),
    )
}

pub fn direction(from: &Point3<f64>, to: &Point3<f64>) -> Vector3<f64> {
    (to - from).normalize()
}

pub fn max_joint_speed(model: &ArmModel, t: &Trajectory) -> f64 {
    let mut worst: f64 = 0.0;
    for w in t.waypoints.windows(2) {
        for i in 0..DOF {
            let v = (w[1].q[i] - w[0].q[i]).abs() / (w[1].t - w[0].t);
            worst = worst.max(v - model.joints[i].max_velocity);
        }
    }
    worst
}

/// Checks the path at joint spacing of at most 1e-3 rad; returns the number of colliding samples.
pub fn dense_hits(world: &CollisionWorld, model: &ArmModel, t: &Trajectory) -> usize {
    let mut hits = 0;
    for w in t.waypoints.windows(2) {
        let len = (0..DOF).map(|i| (w[1].q[i] - w[0].q[i]).abs()).fold(0.0, f64::max);
        let n = (len / 1e-3).ceil().max(1.0) as usize;
        for s in 0..=n {
            let f = s as f64 / n as f64;
            let q: [f64; DOF] = std::array::from_fn(|i| w[0].q[i] + (w[1].q[i] - w[0].q[i]) * f);
            if world.in_collision(model, &q) {
                hits += 1;
            }
        }
    }
    hits
}

pub fn rendered_world(renderer: &mut Renderer, scene: &Scene, model: &ArmModel, q: &[f64; DOF], cfg: &PlanningConfig) -> CollisionWorld {
    let arm = link_capsules(model, q);
    let frame = renderer.render(scene, &arm, &[], None, 0.0);
    let bounds = WorkspaceBounds::new(scene.workspace, arm);
    let cloud = filter_workspace(&frame.cloud, &scene.camera, &bounds);
    build_world(scene, &cloud, &scene.camera, model, q, cfg)
}

pub struct RoundTrip {
    pub ok: usize,
    pub total: usize,
    pub worst: f64,
    pub slowest: f64,
}

impl RoundTrip {
    pub fn passes(&self) -> bool {
        self.ok as f64 >= 0.99 * self.total as f64 && self.slowest < 0.033
    }
}

impl std::fmt::Display for RoundTrip {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{} recovered, worst {:.1} mm, slowest detect {:.1} ms",
            self.ok,
            self.total,
            self.worst * 1e3,
            self.slowest * 1e3
        )
    }
}

/// Render, detect and back-project the laser spot over `n` random scenes where the camera sees
/// the hit; counts recoveries within `tol` of the cast point.
pub fn perception_round_trip(n: usize, seed: u64, tol: f64) -> RoundTrip {
    let model = ArmModel::default_arm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut renderer = Renderer::default();
    let mut r = RoundTrip { ok: 0, total: 0, worst: 0.0, slowest: 0.0 };
    while r.total < n {
        let scene = random_scene(&mut rng);
        let q = random_q(&mut rng, &model);
        let arm = link_capsules(&model, &q);
        let aim = random_aim(&mut rng, &scene);
        let ray = LaserRay::towards(scene.head_position(), aim);
        let Some(hit) = cast_laser_with(&scene, &ray, &arm) else { continue };
        if !camera_sees(&scene, &arm, &hit) {
            continue;
        }
        let bounds = WorkspaceBounds::new(scene.workspace, arm.clone());
        if !bounds.keeps(&hit) {
            continue;
        }
        let (u, v) = scene.camera.project_world(&hit).unwrap();
        if !(2.0..637.0).contains(&u) || !(2.0..477.0).contains(&v) {
            continue;
        }
        r.total += 1;
        let frame = renderer.render(&scene, &arm, &[], Some(hit), 0.0);
        let mut det = ChromaDetector::default();
        let t0 = Instant::now();
        let d = det.detect(&frame.rgb, 0.0);
        r.slowest = r.slowest.max(t0.elapsed().as_secs_f64());
        let Some(d) = d else { continue };
        let Some(p) = pixel_to_point(&filter_workspace(&frame.cloud, &scene.camera, &bounds), &d) else {
            continue;
        };
        let err = (to_base(&p, &scene.camera) - hit).norm();
        r.worst = r.worst.max(err);
        if err <= tol {
            r.ok += 1;
        }
    }
    r
}

pub struct PlanningRun {
    pub planned: usize,
    pub rejected: usize,
    pub slowest: f64,
    /// Problems found in returned trajectories.
    pub faults: Vec<String>,
}

impl PlanningRun {
    pub fn passes(&self) -> bool {
        self.faults.is_empty() && self.planned * 10 >= (self.planned + self.rejected) * 9 && self.slowest < 2.0
    }
}

impl std::fmt::Display for PlanningRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} planned, {} rejected, slowest {:.2} s", self.planned, self.rejected, self.slowest)?;
        for fault in self.faults.iter().take(3) {
            write!(f, "; {fault}")?;
        }
        Ok(())
    }
}

/// Plans from home to a top grasp on a random object in each of `n` random rendered scenes and
/// re-validates every returned trajectory.
pub fn cluttered_planning(n: usize, seed: u64) -> PlanningRun {
    let home = [0.0; DOF];
    let model = ArmModel::default_arm();
    let cfg = PlanningConfig::default();
    let mut renderer = Renderer::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = PlanningRun { planned: 0, rejected: 0, slowest: 0.0, faults: Vec::new() };
    for _ in 0..n {
        let scene = random_scene(&mut rng);
        let world = rendered_world(&mut renderer, &scene, &model, &home, &cfg);
        let target = &scene.objects[rng.gen_range(0..scene.objects.len())];
        let top = target.pose.translation.vector + Vector3::new(0.0, 0.0, target.shape.half_height());
        let goal = top_grasp_pose(&Point3::from(top));

        let t0 = Instant::now();
        let result = plan(&world, &model, &home, &goal, &cfg);
        r.slowest = r.slowest.max(t0.elapsed().as_secs_f64());
        let Ok(traj) = result else {
            r.rejected += 1;
            continue;
        };
        r.planned += 1;
        let mut checked = world.clone();
        checked.occupancy.clear_sphere(&Point3::from(top), cfg.goal_clear_radius);
        let hits = dense_hits(&checked, &model, &traj);
        if hits > 0 {
            r.faults.push(format!("{hits} colliding samples to {top:?}"));
        }
        if max_joint_speed(&model, &traj) > 1e-9 {
            r.faults.push(format!("velocity limit exceeded to {top:?}"));
        }
        if traj.waypoints[0].q != home {
            r.faults.push("trajectory does not start at the current state".into());
        }
        let end = fk(&model, &traj.last());
        let dp = (end.translation.vector - goal.translation.vector).norm();
        let dr = rotation_error(&goal.rotation, &end.rotation).norm();
        if dp >= 5e-3 || dr >= 0.01 {
            r.faults.push(format!("ends {:.1} mm / {dr:.4} rad from goal", dp * 1e3));
        }
        if plan(&world, &model, &home, &goal, &cfg).as_ref() != Ok(&traj) {
            r.faults.push("replanning gave a different trajectory".into());
        }
    }
    r
}

/// Largest deviation between the analytic Jacobian and central differences of fk (h = 1e-6).
pub fn jacobian_fd_error(model: &ArmModel, q: &[f64; DOF]) -> f64 {
    let h = 1e-6;
    let j = jacobian(model, q);
    let mut worst: f64 = 0.0;
    for i in 0..DOF {
        let (mut qp, mut qm) = (*q, *q);
        qp[i] += h;
        qm[i] -= h;
        let (a, b) = (fk(model, &qp), fk(model, &qm));
        let lin = (a.translation.vector - b.translation.vector) / (2.0 * h);
        // World-frame rotation vector of R(q+h) R(q-h)^T.
        let rel = a.rotation * b.rotation.inverse();
        let ang = rel.scaled_axis() / (2.0 * h);
        for k in 0..3 {
            worst = worst.max((j[(k, i)] - lin[k]).abs());
            worst = worst.max((j[(k + 3, i)] - ang[k]).abs());
        }
    }
    worst
}

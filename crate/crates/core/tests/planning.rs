mod common;

use std::collections::HashSet;

use laser_teleop::geometry::{Pose, Shape};
use laser_teleop::kinematics::{link_capsules, ArmModel, DOF};
use laser_teleop::planning::{
    build_world, plan, top_grasp_pose, CollisionWorld, PlanError, PlanningConfig, CLEARANCE_CAP,
};
use laser_teleop::scene::{OrganizedCloud, Renderer, Scene, SceneObject};
use nalgebra::{Point3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HOME: [f64; DOF] = [0.0; DOF];

fn samples(a: &Point3<f64>, b: &Point3<f64>, n: usize) -> Vec<Point3<f64>> {
    (0..=n).map(|i| a + (b - a) * (i as f64 / n as f64)).collect()
}

fn point_box_distance(p: &Point3<f64>, pose: &Pose, half: &Vector3<f64>) -> f64 {
    let l = pose.inverse_transform_point(p);
    let d = Vector3::new(
        (l.x.abs() - half.x).max(0.0),
        (l.y.abs() - half.y).max(0.0),
        (l.z.abs() - half.z).max(0.0),
    );
    d.norm()
}

/// Clearance by sampling every capsule axis densely. Overestimates the true value by at most
/// `spacing` (half a spacing per sampled segment).
fn oracle_clearance(world: &CollisionWorld, model: &ArmModel, q: &[f64; DOF], n: usize) -> (f64, f64) {
    let caps = link_capsules(model, q);
    let pts: Vec<Vec<Point3<f64>>> = caps.iter().map(|c| samples(&c.a, &c.b, n)).collect();
    let spacing = caps.iter().map(|c| (c.b - c.a).norm() / n as f64).fold(0.0, f64::max);
    let mut best = f64::INFINITY;
    for &(i, k) in &model.self_pairs {
        for p in &pts[i] {
            for r in &pts[k] {
                best = best.min((p - r).norm() - caps[i].radius - caps[k].radius);
            }
        }
    }
    let res = world.occupancy.resolution;
    let half_voxel = Vector3::repeat(0.5 * res);
    let voxels: Vec<Point3<f64>> = world.occupancy.occupied().into_iter().map(|k| world.occupancy.center(k)).collect();
    for (idx, c) in caps.iter().enumerate() {
        if model.capsules[idx].frame == 0 {
            continue;
        }
        for p in &pts[idx] {
            for b in &world.boxes {
                best = best.min(point_box_distance(p, &b.pose, &b.half) - c.radius);
            }
            for v in &voxels {
                let d = point_box_distance(p, &Pose::translation(v.x, v.y, v.z), &half_voxel);
                best = best.min(d - c.radius - world.margin);
            }
        }
    }
    (best, spacing)
}

fn cluttered_world<R: Rng>(rng: &mut R, scene: &Scene, cfg: &PlanningConfig) -> CollisionWorld {
    let mut world = build_world(scene, &OrganizedCloud::new_invalid(1, 1), &scene.camera, &ArmModel::default_arm(), &HOME, cfg);
    for _ in 0..rng.gen_range(20..80) {
        world.occupancy.insert(&Point3::new(
            rng.gen_range(0.1..0.8),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(0.0..0.6),
        ));
    }
    for i in 0..rng.gen_range(0..3) {
        let pose = Pose::from_parts(
            Translation3::new(rng.gen_range(0.2..0.8), rng.gen_range(-0.5..0.5), rng.gen_range(0.05..0.4)),
            UnitQuaternion::from_euler_angles(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0)),
        );
        world.add_box(&format!("clutter{i}"), pose, [rng.gen_range(0.02..0.2), rng.gen_range(0.02..0.2), rng.gen_range(0.02..0.2)]);
    }
    world
}

#[test]
fn collision_query_agrees_with_sampled_distance_oracle() {
    let model = ArmModel::default_arm();
    let scene = Scene::default_desk();
    let cfg = PlanningConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut hits, mut free, mut ambiguous) = (0, 0, 0);
    for _ in 0..200 {
        let world = cluttered_world(&mut rng, &scene, &cfg);
        let q = common::random_q(&mut rng, &model);
        let (oracle, spacing) = oracle_clearance(&world, &model, &q, 200);
        let got = world.clearance(&model, &q);
        // Negative clearances only carry their sign: the query stops at the first contact.
        if got > 0.0 {
            let expect = oracle.min(CLEARANCE_CAP);
            assert!(
                got <= expect + 1e-9 && got >= expect - spacing - 1e-9,
                "q {q:?}: clearance {got} vs oracle {oracle} (spacing {spacing})"
            );
        } else {
            assert!(oracle <= spacing, "q {q:?}: clearance {got} vs oracle {oracle}");
        }
        if oracle - spacing > 0.0 {
            assert!(!world.in_collision(&model, &q));
            free += 1;
        } else if oracle <= 0.0 {
            assert!(world.in_collision(&model, &q));
            hits += 1;
        } else {
            ambiguous += 1;
        }
    }
    println!("collision oracle: {hits} colliding, {free} free, {ambiguous} within sampling band");
    assert!(hits > 20 && free > 20);
}

#[test]
fn plans_in_cluttered_scenes_are_collision_free() {
    let r = common::cluttered_planning(100, 5);
    println!("{r}");
    assert!(r.passes());
}

#[test]
fn goals_inside_table_are_rejected() {
    let model = ArmModel::default_arm();
    let scene = Scene::default_desk();
    let cfg = PlanningConfig::default();
    let world = build_world(&scene, &OrganizedCloud::new_invalid(1, 1), &scene.camera, &model, &HOME, &cfg);
    let area = scene.work_area.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let p = Point3::new(
            rng.gen_range(area.min[0]..area.max[0]),
            rng.gen_range(area.min[1]..area.max[1]),
            rng.gen_range(-0.045..-0.01),
        );
        assert_eq!(plan(&world, &model, &HOME, &top_grasp_pose(&p), &cfg), Err(PlanError::NoPathFound), "{p:?}");
    }
    let beyond = top_grasp_pose(&Point3::new(1.5, 0.0, 0.05));
    assert_eq!(plan(&world, &model, &HOME, &beyond, &cfg), Err(PlanError::IkUnreachable));
}

fn box_surface_points(shape: &Shape, pose: &Pose, step: f64) -> Vec<Point3<f64>> {
    let Shape::Box { size } = *shape else { panic!("box expected") };
    let h = Vector3::new(size[0], size[1], size[2]) * 0.5;
    let mut out = Vec::new();
    let n: [usize; 3] = std::array::from_fn(|i| (size[i] / step).ceil() as usize);
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for sign in [-1.0, 1.0] {
            for i in 0..=n[u] {
                for j in 0..=n[v] {
                    let mut l = Vector3::zeros();
                    l[axis] = sign * h[axis];
                    l[u] = -h[u] + size[u] * i as f64 / n[u] as f64;
                    l[v] = -h[v] + size[v] * j as f64 / n[v] as f64;
                    out.push(pose * Point3::from(l));
                }
            }
        }
    }
    out
}

#[test]
fn rendered_object_voxels_match_true_surface() {
    let model = ArmModel::default_arm();
    let cfg = PlanningConfig::default();
    let mut renderer = Renderer::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    // Arm folded back, out of the camera's view of the work area.
    let q_park = [0.0, -0.15, -1.5, 0.0, 1.0, 0.0];
    for _ in 0..10 {
        let mut scene = Scene::default_desk();
        let area = scene.work_area.unwrap();
        let shape = Shape::Box {
            size: [rng.gen_range(0.04..0.12), rng.gen_range(0.04..0.12), rng.gen_range(0.04..0.15)],
        };
        let pose = Pose::from_parts(
            Translation3::new(rng.gen_range(area.min[0]..area.max[0]), rng.gen_range(area.min[1]..area.max[1]), shape.half_height()),
            UnitQuaternion::from_euler_angles(0.0, 0.0, rng.gen_range(-3.0..3.0)),
        );
        scene.objects = vec![SceneObject {
            name: "probe".into(),
            shape,
            pose,
            graspable: true,
            color: None,
        }];
        let world = common::rendered_world(&mut renderer, &scene, &model, &q_park, &cfg);
        let grid = &world.occupancy;
        let truth: HashSet<[i64; 3]> = box_surface_points(&shape, &pose, 0.002)
            .iter()
            .filter(|p| p.z > cfg.box_tolerance)
            .map(|p| grid.key(p))
            .collect();
        let near = |k: &[i64; 3], set: &dyn Fn(&[i64; 3]) -> bool| {
            (-1..=1).any(|a| (-1..=1).any(|b| (-1..=1).any(|c| set(&[k[0] + a, k[1] + b, k[2] + c]))))
        };
        let occupied = grid.occupied();
        assert!(!occupied.is_empty());
        for k in &occupied {
            assert!(near(k, &|n| truth.contains(n)), "stray voxel {k:?}");
        }
        let arm = link_capsules(&model, &q_park);
        let mut seen = 0;
        for p in box_surface_points(&shape, &pose, 0.01) {
            if p.z > 0.01 && common::camera_sees(&scene, &arm, &(p + (scene.camera.origin() - p).normalize() * 1e-7)) {
                seen += 1;
                assert!(near(&grid.key(&p), &|n| grid.is_occupied(*n)), "visible surface at {p:?} missing");
            }
        }
        assert!(seen > 0);
    }
}

//! Forward kinematics, geometric Jacobian, damped-least-squares IK and Cartesian jogging for the
//! simulated 6R arm.

mod model;

pub use model::*;

use nalgebra::{Matrix6, Point3, Translation3, UnitQuaternion, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_error, Capsule, Pose, Vec3};

pub type Jacobian = Matrix6<f64>;

/// Joint configuration plus gripper aperture (0 closed, 1 open).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: [f64; DOF],
    pub gripper: f64,
    pub stamp: f64,
}

impl JointState {
    pub fn new(q: [f64; DOF]) -> Self {
        JointState {
            q,
            gripper: 1.0,
            stamp: 0.0,
        }
    }
}

/// Cartesian velocity command: linear part in base_link, angular part about the tcp axes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: [f64; 3],
    pub angular: [f64; 3],
}

impl Twist {
    pub fn is_zero(&self) -> bool {
        self.linear.iter().chain(&self.angular).all(|v| *v == 0.0)
    }
}

/// DLS tuning shared by IK and velocity control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkParams {
    pub damping: f64,
    pub step_clamp: f64,
    pub max_iterations: usize,
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        IkParams {
            damping: 0.05,
            step_clamp: 0.2,
            max_iterations: 200,
            position_tolerance: 1e-4,
            orientation_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JogParams {
    /// Damping applied at full strength when the smallest singular value reaches zero.
    pub damping: f64,
    /// Smallest singular value below which damping fades in.
    pub singular_region: f64,
    /// Below this manipulability the commanded motion is zeroed.
    pub min_manipulability: f64,
}

impl Default for JogParams {
    fn default() -> Self {
        JogParams {
            damping: 0.05,
            singular_region: 0.08,
            min_manipulability: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum IkError {
    #[error("IK did not converge (position error {position_error:.4} m, orientation error {orientation_error:.4} rad)")]
    NotConverged {
        position_error: f64,
        orientation_error: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub q: [f64; DOF],
    pub iterations: usize,
}

/// World poses of the base frame and every joint frame, index `k` = after joint `k`.
pub fn link_frames(model: &ArmModel, q: &[f64; DOF]) -> [Pose; DOF + 1] {
    let mut frames = [Pose::identity(); DOF + 1];
    let mut t = Pose::identity();
    for (i, joint) in model.joints.iter().enumerate() {
        t = t * joint.origin * UnitQuaternion::from_axis_angle(&joint.axis, q[i]);
        frames[i + 1] = t;
    }
    frames
}

/// Tool centre point pose in base_link.
pub fn fk(model: &ArmModel, q: &[f64; DOF]) -> Pose {
    let frames = link_frames(model, q);
    let mut tcp = frames[DOF] * model.tool;
    tcp.rotation.renormalize();
    tcp
}

/// Link collision capsules placed at configuration `q`.
pub fn link_capsules(model: &ArmModel, q: &[f64; DOF]) -> Vec<Capsule> {
    let frames = link_frames(model, q);
    model
        .capsules
        .iter()
        .map(|c| {
            let f = &frames[c.frame];
            Capsule {
                a: f * c.a,
                b: f * c.b,
                radius: c.radius,
            }
        })
        .collect()
}

/// Geometric Jacobian at the tcp in base_link coordinates; rows 0..3 linear, 3..6 angular.
pub fn jacobian(model: &ArmModel, q: &[f64; DOF]) -> Jacobian {
    let frames = link_frames(model, q);
    let p_tcp = (frames[DOF] * model.tool).translation.vector;
    let mut j = Jacobian::zeros();
    let mut t = Pose::identity();
    for (i, joint) in model.joints.iter().enumerate() {
        let joint_frame = t * joint.origin;
        let axis = joint_frame.rotation * joint.axis.into_inner();
        let origin = joint_frame.translation.vector;
        let lin = axis.cross(&(p_tcp - origin));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&axis);
        t = frames[i + 1];
    }
    j
}

/// sqrt(det(J Jᵀ)).
pub fn manipulability(j: &Jacobian) -> f64 {
    (j * j.transpose()).determinant().max(0.0).sqrt()
}

fn dls_step(j: &Jacobian, err: &Vector6<f64>, damping: f64) -> Vector6<f64> {
    let a = j * j.transpose() + Matrix6::identity() * (damping * damping);
    let y = a
        .cholesky()
        .map(|c| c.solve(err))
        .unwrap_or_else(|| Vector6::zeros());
    j.transpose() * y
}

/// DLS step with limit clamping: a joint whose step would cross its limit is clamped there and
/// its column removed, and the remaining joints are re-solved for the leftover error.
fn clamped_dls_step(
    model: &ArmModel,
    q: &[f64; DOF],
    j: &Jacobian,
    err: &Vector6<f64>,
    params: &IkParams,
) -> Vector6<f64> {
    let mut jm = *j;
    let mut fixed = Vector6::<f64>::zeros();
    let mut is_fixed = [false; DOF];
    let mut dq = Vector6::zeros();
    for _ in 0..DOF {
        let residual = err - j * fixed;
        dq = dls_step(&jm, &residual, params.damping);
        let peak = dq.amax();
        if peak > params.step_clamp {
            dq *= params.step_clamp / peak;
        }
        let mut changed = false;
        for i in 0..DOF {
            if is_fixed[i] {
                continue;
            }
            let joint = &model.joints[i];
            let next = q[i] + dq[i];
            if next < joint.lower || next > joint.upper {
                fixed[i] = next.clamp(joint.lower, joint.upper) - q[i];
                is_fixed[i] = true;
                jm.column_mut(i).fill(0.0);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for i in 0..DOF {
        if is_fixed[i] {
            dq[i] = fixed[i];
        }
    }
    dq
}

fn pose_error(target: &Pose, current: &Pose) -> (Vec3, Vec3) {
    (
        target.translation.vector - current.translation.vector,
        rotation_error(&target.rotation, &current.rotation),
    )
}

/// Damped least-squares IK from `seed`; joint limits are enforced by clamping every iteration.
pub fn ik(
    model: &ArmModel,
    target: &Pose,
    seed: &[f64; DOF],
    params: &IkParams,
) -> Result<IkSolution, IkError> {
    let mut q = *seed;
    model.clamp(&mut q);
    let mut last = (f64::INFINITY, f64::INFINITY);
    for iteration in 0..=params.max_iterations {
        let (ep, er) = pose_error(target, &fk(model, &q));
        last = (ep.norm(), er.norm());
        if last.0 < params.position_tolerance && last.1 < params.orientation_tolerance {
            return Ok(IkSolution { q, iterations: iteration });
        }
        if iteration == params.max_iterations {
            break;
        }
        let err = Vector6::new(ep.x, ep.y, ep.z, er.x, er.y, er.z);
        let dq = clamped_dls_step(model, &q, &jacobian(model, &q), &err, params);
        for i in 0..DOF {
            q[i] += dq[i];
        }
        model.clamp(&mut q);
    }
    Err(IkError::NotConverged {
        position_error: last.0,
        orientation_error: last.1,
    })
}

/// Joint velocity realising `twist` at configuration `q`, after singularity guarding and
/// velocity-limit scaling.
pub fn joint_velocity(model: &ArmModel, q: &[f64; DOF], twist: &Twist, params: &JogParams) -> [f64; DOF] {
    if twist.is_zero() {
        return [0.0; DOF];
    }
    let j = jacobian(model, q);
    if manipulability(&j) < params.min_manipulability {
        return [0.0; DOF];
    }
    let tcp = fk(model, q);
    let w = tcp.rotation * Vec3::from(twist.angular);
    let v = Vector6::new(
        twist.linear[0],
        twist.linear[1],
        twist.linear[2],
        w.x,
        w.y,
        w.z,
    );
    let sigma_min = j.singular_values().min();
    let damping = if sigma_min < params.singular_region {
        params.damping * (1.0 - (sigma_min / params.singular_region).powi(2)).sqrt()
    } else {
        0.0
    };
    let qd = dls_step(&j, &v, damping);
    let mut scale: f64 = 1.0;
    for (i, joint) in model.joints.iter().enumerate() {
        let s = qd[i].abs();
        if s > joint.max_velocity {
            scale = scale.min(joint.max_velocity / s);
        }
    }
    std::array::from_fn(|i| qd[i] * scale)
}

/// One Euler step of Cartesian velocity control; result clamped to joint limits.
pub fn integrate_velocity(
    model: &ArmModel,
    q: &[f64; DOF],
    twist: &Twist,
    dt: f64,
    params: &JogParams,
) -> [f64; DOF] {
    let qd = joint_velocity(model, q, twist, params);
    let mut out: [f64; DOF] = std::array::from_fn(|i| q[i] + qd[i] * dt);
    model.clamp(&mut out);
    out
}

/// Pose with a translated position and the same orientation.
pub fn with_position(pose: &Pose, p: &Point3<f64>) -> Pose {
    Pose::from_parts(Translation3::from(p.coords), pose.rotation)
}

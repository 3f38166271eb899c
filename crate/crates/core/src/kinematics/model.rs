use nalgebra::{Point3, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_from_xyz_rpy, Pose, Vec3};

pub const ARM_SCHEMA_VERSION: u32 = 1;
pub const DOF: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Origin {
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Origin {
    pub fn pose(&self) -> Pose {
        pose_from_xyz_rpy(self.xyz, self.rpy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    /// Transform from the previous joint frame to this joint's frame at zero angle.
    pub origin: Origin,
    pub axis: [f64; 3],
    /// `[lower, upper]` in rad.
    pub limits: [f64; 2],
    /// rad/s
    pub max_velocity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsuleSpec {
    /// 0 is the fixed base frame, `k` the frame after joint `k`.
    pub frame: usize,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperSpec {
    /// Full open/close travel time, s.
    pub travel_time: f64,
    /// Finger opening at aperture 1, m.
    pub max_opening: f64,
    /// Simulated effort per unit of squeeze interference.
    pub effort_gain: f64,
}

impl Default for GripperSpec {
    fn default() -> Self {
        GripperSpec {
            travel_time: 0.5,
            max_opening: 0.08,
            effort_gain: 40.0,
        }
    }
}

/// On-disk arm description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmFile {
    pub version: u32,
    pub name: String,
    pub joints: Vec<JointSpec>,
    /// Transform from the last joint frame to the tool centre point.
    pub tool: Origin,
    pub capsules: Vec<CapsuleSpec>,
    #[serde(default)]
    pub self_collision_ignore: Vec<[usize; 2]>,
    #[serde(default)]
    pub gripper: GripperSpec,
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub origin: Pose,
    pub axis: Unit<Vec3>,
    pub lower: f64,
    pub upper: f64,
    pub max_velocity: f64,
}

#[derive(Debug, Clone)]
pub struct LinkCapsule {
    pub frame: usize,
    pub a: Point3<f64>,
    pub b: Point3<f64>,
    pub radius: f64,
}

/// Validated serial 6R arm.
#[derive(Debug, Clone)]
pub struct ArmModel {
    pub name: String,
    pub joints: Vec<Joint>,
    pub tool: Pose,
    pub capsules: Vec<LinkCapsule>,
    /// Capsule index pairs checked for self-collision.
    pub self_pairs: Vec<(usize, usize)>,
    pub gripper: GripperSpec,
    /// Upper bound on how far any capsule point moves per radian of joint motion
    /// (infinity-norm), summed over joints.
    pub motion_bound: f64,
    source: ArmFile,
}

impl ArmModel {
    pub fn from_file(file: ArmFile) -> Result<Self> {
        if file.version != ARM_SCHEMA_VERSION {
            return Err(Error::schema(format!(
                "arm model version {} unsupported (expected {ARM_SCHEMA_VERSION})",
                file.version
            )));
        }
        if file.joints.len() != DOF {
            return Err(Error::invalid(format!(
                "arm model needs exactly {DOF} joints, got {}",
                file.joints.len()
            )));
        }
        let mut joints = Vec::with_capacity(DOF);
        for j in &file.joints {
            let axis = Vec3::from(j.axis);
            if axis.norm() < 1e-9 {
                return Err(Error::invalid(format!("joint {} has a zero axis", j.name)));
            }
            if !(j.limits[0] < j.limits[1]) {
                return Err(Error::invalid(format!(
                    "joint {}: lower limit must be below upper",
                    j.name
                )));
            }
            if !(j.max_velocity > 0.0) {
                return Err(Error::invalid(format!("joint {}: max_velocity must be > 0", j.name)));
            }
            joints.push(Joint {
                name: j.name.clone(),
                origin: j.origin.pose(),
                axis: Unit::new_normalize(axis),
                lower: j.limits[0],
                upper: j.limits[1],
                max_velocity: j.max_velocity,
            });
        }
        let mut capsules = Vec::with_capacity(file.capsules.len());
        for c in &file.capsules {
            if c.frame > DOF {
                return Err(Error::invalid(format!("capsule frame {} out of range", c.frame)));
            }
            if !(c.radius > 0.0) {
                return Err(Error::invalid("capsule radius must be > 0"));
            }
            capsules.push(LinkCapsule {
                frame: c.frame,
                a: Point3::from(c.a),
                b: Point3::from(c.b),
                radius: c.radius,
            });
        }
        let ignore: Vec<(usize, usize)> = file
            .self_collision_ignore
            .iter()
            .map(|[a, b]| ((*a).min(*b), (*a).max(*b)))
            .collect();
        let mut self_pairs = Vec::new();
        for i in 0..capsules.len() {
            for k in i + 1..capsules.len() {
                let (fi, fk) = (capsules[i].frame, capsules[k].frame);
                // Capsules on the same or adjacent frames touch at their shared joint.
                if fk.abs_diff(fi) < 2 || ignore.contains(&(i, k)) {
                    continue;
                }
                self_pairs.push((i, k));
            }
        }
        let motion_bound = compute_motion_bound(&joints, &file.tool.pose(), &capsules);
        if file.gripper.travel_time <= 0.0 || file.gripper.max_opening <= 0.0 {
            return Err(Error::invalid("gripper travel_time and max_opening must be > 0"));
        }
        Ok(ArmModel {
            name: file.name.clone(),
            joints,
            tool: file.tool.pose(),
            capsules,
            self_pairs,
            gripper: file.gripper,
            motion_bound,
            source: file,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ArmFile = serde_json::from_str(text).map_err(|e| Error::schema(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The built-in desk-scale 6R arm.
    pub fn default_arm() -> Self {
        Self::from_json(include_str!("../../assets/arm/desk6r.json"))
            .expect("built-in arm model is valid")
    }

    pub fn file(&self) -> &ArmFile {
        &self.source
    }

    pub fn lower(&self) -> [f64; DOF] {
        std::array::from_fn(|i| self.joints[i].lower)
    }

    pub fn upper(&self) -> [f64; DOF] {
        std::array::from_fn(|i| self.joints[i].upper)
    }

    pub fn mid_range(&self) -> [f64; DOF] {
        std::array::from_fn(|i| 0.5 * (self.joints[i].lower + self.joints[i].upper))
    }

    pub fn within_limits(&self, q: &[f64; DOF]) -> bool {
        q.iter()
            .zip(&self.joints)
            .all(|(v, j)| *v >= j.lower && *v <= j.upper)
    }

    pub fn clamp(&self, q: &mut [f64; DOF]) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = v.clamp(j.lower, j.upper);
        }
    }
}

fn compute_motion_bound(joints: &[Joint], tool: &Pose, capsules: &[LinkCapsule]) -> f64 {
    // Reach from joint i to anything distal: chain offsets plus the farthest capsule point.
    let reach_from = |i: usize| -> f64 {
        let mut r: f64 = joints[i + 1..]
            .iter()
            .map(|j| j.origin.translation.vector.norm())
            .sum();
        let mut extra: f64 = tool.translation.vector.norm();
        for c in capsules.iter().filter(|c| c.frame > i) {
            extra = extra.max(c.a.coords.norm().max(c.b.coords.norm()) + c.radius);
        }
        r += extra;
        r
    };
    (0..joints.len()).map(reach_from).sum()
}

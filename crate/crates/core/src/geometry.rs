//! Rigid transforms, primitive shapes, ray casting and closest-distance queries.

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Pose = Isometry3<f64>;
pub type Vec3 = Vector3<f64>;

/// Smallest ray parameter accepted as a hit.
pub const RAY_EPS: f64 = 1e-9;

/// File representation of a pose: position in metres and a quaternion in `[x, y, z, w]` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDef {
    pub position: [f64; 3],
    #[serde(default = "identity_quat")]
    pub orientation: [f64; 4],
}

fn identity_quat() -> [f64; 4] {
    [0.0, 0.0, 0.0, 1.0]
}

impl PoseDef {
    pub fn quaternion_norm(&self) -> f64 {
        let [x, y, z, w] = self.orientation;
        (x * x + y * y + z * z + w * w).sqrt()
    }

    pub fn to_pose(&self) -> Pose {
        let [x, y, z, w] = self.orientation;
        let [px, py, pz] = self.position;
        Isometry3::from_parts(
            Translation3::new(px, py, pz),
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
        )
    }
}

impl From<&Pose> for PoseDef {
    fn from(p: &Pose) -> Self {
        let t = p.translation.vector;
        let q = p.rotation.quaternion();
        PoseDef {
            position: [t.x, t.y, t.z],
            orientation: [q.i, q.j, q.k, q.w],
        }
    }
}

/// Serde adapter so structs can hold a [`Pose`] directly.
pub mod pose_serde {
    use super::{Pose, PoseDef};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Pose, s: S) -> Result<S::Ok, S::Error> {
        PoseDef::from(p).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Pose, D::Error> {
        let def = PoseDef::deserialize(d)?;
        let n = def.quaternion_norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(serde::de::Error::custom(format!(
                "pose quaternion must be unit-norm within 1e-9 (got norm {n})"
            )));
        }
        Ok(def.to_pose())
    }
}

pub fn pose_from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Pose {
    Isometry3::from_parts(
        Translation3::new(xyz[0], xyz[1], xyz[2]),
        UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]),
    )
}

/// Orientation error between two rotations as an axis-angle vector in the base frame.
pub fn rotation_error(target: &UnitQuaternion<f64>, current: &UnitQuaternion<f64>) -> Vec3 {
    (target * current.inverse()).scaled_axis()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    /// Unit direction.
    pub dir: Vec3,
}

impl Ray {
    pub fn new(origin: Point3<f64>, dir: Vec3) -> Self {
        Ray {
            origin,
            dir: dir.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.dir * t
    }
}

/// Shape of a scene primitive, dimensions in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Full edge lengths along local x, y, z.
    Box { size: [f64; 3] },
    Sphere { radius: f64 },
    /// Axis along local z, centred on the pose origin.
    Cylinder { radius: f64, height: f64 },
}

impl Shape {
    pub fn dimensions_positive(&self) -> bool {
        match *self {
            Shape::Box { size } => size.iter().all(|s| *s > 0.0),
            Shape::Sphere { radius } => radius > 0.0,
            Shape::Cylinder { radius, height } => radius > 0.0 && height > 0.0,
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Box { size } => 0.5 * Vec3::new(size[0], size[1], size[2]).norm(),
            Shape::Sphere { radius } => radius,
            Shape::Cylinder { radius, height } => (radius * radius + 0.25 * height * height).sqrt(),
        }
    }

    /// Half height along local z, used for resting objects on supports.
    pub fn half_height(&self) -> f64 {
        match *self {
            Shape::Box { size } => 0.5 * size[2],
            Shape::Sphere { radius } => radius,
            Shape::Cylinder { height, .. } => 0.5 * height,
        }
    }

    /// Nearest hit of a world ray against this shape placed at `pose`.
    pub fn ray_hit(&self, pose: &Pose, ray: &Ray) -> Option<(f64, Vec3)> {
        let inv = pose.inverse();
        let local = Ray {
            origin: inv * ray.origin,
            dir: inv.rotation * ray.dir,
        };
        let (t, n) = self.local_ray_hit(&local)?;
        Some((t, pose.rotation * n))
    }

    /// Hit against the shape in its own frame; the normal is returned in that frame.
    pub fn local_ray_hit(&self, local: &Ray) -> Option<(f64, Vec3)> {
        match *self {
            Shape::Box { size } => ray_aabb(local, &(Vec3::new(size[0], size[1], size[2]) * 0.5)),
            Shape::Sphere { radius } => ray_sphere(local, &Point3::origin(), radius),
            Shape::Cylinder { radius, height } => ray_cylinder_z(local, radius, 0.5 * height),
        }
    }

    /// Smallest horizontal extent, used as the grasp width.
    pub fn grasp_width(&self) -> f64 {
        match *self {
            Shape::Box { size } => size[0].min(size[1]),
            Shape::Sphere { radius } | Shape::Cylinder { radius, .. } => 2.0 * radius,
        }
    }

    /// Signed membership test with tolerance, point in world coordinates.
    pub fn contains(&self, pose: &Pose, p: &Point3<f64>, tol: f64) -> bool {
        let l = pose.inverse() * p;
        match *self {
            Shape::Box { size } => {
                l.x.abs() <= 0.5 * size[0] + tol
                    && l.y.abs() <= 0.5 * size[1] + tol
                    && l.z.abs() <= 0.5 * size[2] + tol
            }
            Shape::Sphere { radius } => l.coords.norm() <= radius + tol,
            Shape::Cylinder { radius, height } => {
                (l.x * l.x + l.y * l.y).sqrt() <= radius + tol && l.z.abs() <= 0.5 * height + tol
            }
        }
    }
}

/// Slab test against an origin-centred box. Returns the entry parameter and outward normal.
pub fn ray_aabb(ray: &Ray, half: &Vec3) -> Option<(f64, Vec3)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0usize;
    let mut far_axis = 0usize;
    for i in 0..3 {
        let o = ray.origin[i];
        let d = ray.dir[i];
        if d.abs() < 1e-15 {
            if o < -half[i] || o > half[i] {
                return None;
            }
            continue;
        }
        let mut t1 = (-half[i] - o) / d;
        let mut t2 = (half[i] - o) / d;
        if t1 > t2 {
            std::mem::swap(&mut t1, &mut t2);
        }
        if t1 > t_near {
            t_near = t1;
            near_axis = i;
        }
        if t2 < t_far {
            t_far = t2;
            far_axis = i;
        }
        if t_near > t_far {
            return None;
        }
    }
    let (t, axis) = if t_near > RAY_EPS {
        (t_near, near_axis)
    } else if t_far > RAY_EPS {
        (t_far, far_axis)
    } else {
        return None;
    };
    let p = ray.at(t);
    let mut n = Vec3::zeros();
    n[axis] = p[axis].signum();
    Some((t, n))
}

pub fn ray_sphere(ray: &Ray, center: &Point3<f64>, radius: f64) -> Option<(f64, Vec3)> {
    let oc = ray.origin - center;
    let b = oc.dot(&ray.dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t = if -b - s > RAY_EPS {
        -b - s
    } else if -b + s > RAY_EPS {
        -b + s
    } else {
        return None;
    };
    let n = (ray.at(t) - center) / radius;
    Some((t, n))
}

/// Closed cylinder with axis along local z, |z| <= half_height.
pub fn ray_cylinder_z(ray: &Ray, radius: f64, half_height: f64) -> Option<(f64, Vec3)> {
    let mut best: Option<(f64, Vec3)> = None;
    let mut consider = |t: f64, n: Vec3| {
        if t > RAY_EPS && best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, n));
        }
    };
    let (ox, oy, dx, dy) = (ray.origin.x, ray.origin.y, ray.dir.x, ray.dir.y);
    let a = dx * dx + dy * dy;
    if a > 1e-15 {
        let b = ox * dx + oy * dy;
        let c = ox * ox + oy * oy - radius * radius;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let s = disc.sqrt();
            for t in [(-b - s) / a, (-b + s) / a] {
                let p = ray.at(t);
                if p.z.abs() <= half_height {
                    consider(t, Vec3::new(p.x, p.y, 0.0) / radius);
                }
            }
        }
    }
    if ray.dir.z.abs() > 1e-15 {
        for (zc, nz) in [(half_height, 1.0), (-half_height, -1.0)] {
            let t = (zc - ray.origin.z) / ray.dir.z;
            let p = ray.at(t);
            if p.x * p.x + p.y * p.y <= radius * radius {
                consider(t, Vec3::new(0.0, 0.0, nz));
            }
        }
    }
    best
}

/// Hit against a finite rectangle lying in the local z = 0 plane of `pose`.
pub fn ray_rect(ray: &Ray, pose: &Pose, half_x: f64, half_y: f64) -> Option<(f64, Vec3)> {
    let inv = pose.inverse();
    let o = inv * ray.origin;
    let d = inv.rotation * ray.dir;
    if d.z.abs() < 1e-15 {
        return None;
    }
    let t = -o.z / d.z;
    if t <= RAY_EPS {
        return None;
    }
    let p = o + d * t;
    if p.x.abs() > half_x || p.y.abs() > half_y {
        return None;
    }
    let n = pose.rotation * Vec3::new(0.0, 0.0, if d.z < 0.0 { 1.0 } else { -1.0 });
    Some((t, n))
}

/// Axis-aligned box with closed faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Aabb { min, max }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|i| (self.max[i] - self.min[i]).max(0.0)).product()
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Whether the xy footprints overlap (closed intervals).
    pub fn overlaps_xy(&self, other: &Aabb) -> bool {
        (0..2).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }
}

/// A segment swept by a sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Point3<f64>,
    pub b: Point3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn ray_hit(&self, ray: &Ray) -> Option<(f64, Vec3)> {
        let mut best: Option<(f64, Vec3)> = None;
        let mut keep = |hit: Option<(f64, Vec3)>| {
            if let Some((t, n)) = hit {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, n));
                }
            }
        };
        keep(ray_sphere(ray, &self.a, self.radius));
        keep(ray_sphere(ray, &self.b, self.radius));
        let axis = self.b - self.a;
        let len = axis.norm();
        if len > 1e-12 {
            let w = axis / len;
            // Cylinder body in coordinates perpendicular to the axis.
            let oc = ray.origin - self.a;
            let d_perp = ray.dir - w * ray.dir.dot(&w);
            let o_perp = oc - w * oc.dot(&w);
            let a = d_perp.norm_squared();
            if a > 1e-15 {
                let b = o_perp.dot(&d_perp);
                let c = o_perp.norm_squared() - self.radius * self.radius;
                let disc = b * b - a * c;
                if disc >= 0.0 {
                    let s = disc.sqrt();
                    for t in [(-b - s) / a, (-b + s) / a] {
                        if t <= RAY_EPS {
                            continue;
                        }
                        let p = ray.at(t);
                        let h = (p - self.a).dot(&w);
                        if (0.0..=len).contains(&h) {
                            let n = ((p - self.a) - w * h) / self.radius;
                            keep(Some((t, n)));
                            break;
                        }
                    }
                }
            }
        }
        best
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        point_segment_distance(p, &self.a, &self.b) <= self.radius
    }

    pub fn bounding_sphere(&self) -> (Point3<f64>, f64) {
        let c = nalgebra::center(&self.a, &self.b);
        (c, 0.5 * (self.b - self.a).norm() + self.radius)
    }
}

pub fn point_segment_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let t = if l2 > 0.0 {
        ((p - a).dot(&ab) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Closest distance between segments `p1q1` and `p2q2`.
pub fn segment_segment_distance(
    p1: &Point3<f64>,
    q1: &Point3<f64>,
    p2: &Point3<f64>,
    q2: &Point3<f64>,
) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    const EPS: f64 = 1e-14;
    let (s, t);
    if a <= EPS && e <= EPS {
        return r.norm();
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

pub fn point_aabb_distance_sq(p: &Vec3, half: &Vec3) -> f64 {
    (0..3)
        .map(|i| {
            let excess = p[i].abs() - half[i];
            if excess > 0.0 {
                excess * excess
            } else {
                0.0
            }
        })
        .sum()
}

/// Exact distance between segment `ab` and an origin-centred box with half extents `half`.
///
/// The squared distance is piecewise quadratic in the segment parameter, with breakpoints where
/// the segment crosses a slab face; each piece is minimised in closed form.
pub fn segment_aabb_distance(a: &Vec3, b: &Vec3, half: &Vec3) -> f64 {
    let d = b - a;
    let mut breaks = [0.0f64; 8];
    let mut n = 0;
    breaks[n] = 0.0;
    n += 1;
    for i in 0..3 {
        if d[i].abs() > 1e-15 {
            for face in [-half[i], half[i]] {
                let t = (face - a[i]) / d[i];
                if t > 0.0 && t < 1.0 {
                    breaks[n] = t;
                    n += 1;
                }
            }
        }
    }
    let mut ts = breaks[..n].to_vec();
    ts.push(1.0);
    ts.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let eval = |t: f64| point_aabb_distance_sq(&(a + d * t), half);
    let mut best = eval(0.0).min(eval(1.0));
    for w in ts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 - t0 <= 0.0 {
            continue;
        }
        let mid = a + d * (0.5 * (t0 + t1));
        // On this piece every axis is either inside its slab or clamped to a fixed face.
        let mut qa = 0.0;
        let mut qb = 0.0;
        for i in 0..3 {
            if mid[i] > half[i] {
                qa += d[i] * d[i];
                qb += d[i] * (a[i] - half[i]);
            } else if mid[i] < -half[i] {
                qa += d[i] * d[i];
                qb += d[i] * (a[i] + half[i]);
            }
        }
        if qa > 0.0 {
            let t = (-qb / qa).clamp(t0, t1);
            best = best.min(eval(t));
        } else {
            best = best.min(eval(0.5 * (t0 + t1)));
        }
    }
    best.max(0.0).sqrt()
}

/// Distance between a capsule's core segment and an oriented box, minus nothing (raw segment
/// distance). Callers subtract radii.
pub fn segment_obb_distance(a: &Point3<f64>, b: &Point3<f64>, pose: &Pose, half: &Vec3) -> f64 {
    let inv = pose.inverse();
    segment_aabb_distance(&(inv * a).coords, &(inv * b).coords, half)
}

//! Deterministic world model: scene description, laser raycasting, synthetic RGB-D frames and
//! the fixed-step arm/gripper/object simulation.

mod camera;
mod render;
mod sim;

use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

pub use camera::{CameraModel, Intrinsics};
pub use render::{
    render_frame, CameraFrame, LaserBlob, OrganizedCloud, Renderer, RgbImage,
};
pub use sim::{GripperCommand, SimEvent, SimState, DEFAULT_GRASP_RADIUS};

use crate::control::keyboard::{KeyboardLayout, LayoutFile};
use crate::error::{Error, Result};
use crate::geometry::{pose_serde, ray_rect, Aabb, Capsule, Pose, Ray, Shape, Vec3};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticBox {
    pub label: String,
    #[serde(with = "pose_serde")]
    pub pose: Pose,
    pub size: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[u8; 3]>,
    /// Invisible boxes exist only for collision checking (e.g. the user's bounding box).
    #[serde(default = "yes")]
    pub visible: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub name: String,
    pub shape: Shape,
    #[serde(with = "pose_serde")]
    pub pose: Pose,
    #[serde(default)]
    pub graspable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[u8; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyboardFile {
    #[serde(with = "pose_serde")]
    pub pose: Pose,
    /// `"default"` for the built-in layout, otherwise a path relative to the scene file.
    pub layout_ref: String,
    /// Inline layout; takes precedence over `layout_ref` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<LayoutFile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    /// Laser origin (the user's head) in base_link, m.
    pub position: [f64; 3],
}

impl Default for HeadSpec {
    fn default() -> Self {
        HeadSpec {
            position: [1.35, -0.1, 0.45],
        }
    }
}

fn identity_pose() -> Pose {
    Pose::identity()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub static_boxes: Vec<StaticBox>,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyboard: Option<KeyboardFile>,
    pub camera: CameraModel,
    #[serde(default = "identity_pose", with = "pose_serde")]
    pub arm_base_pose: Pose,
    #[serde(default)]
    pub head: HeadSpec,
    /// Perception workspace bounds in base_link.
    pub workspace: Aabb,
    /// Table region where objects are manipulated; must not overlap the keyboard.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work_area: Option<Aabb>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyboard {
    pub pose: Pose,
    pub layout_ref: String,
    pub layout: KeyboardLayout,
}

impl Keyboard {
    pub fn half_extents(&self) -> (f64, f64) {
        self.layout.half_extents()
    }

    /// Keyboard-plane coordinates of a world point and its signed height above the plane.
    pub fn local(&self, p: &Point3<f64>) -> Point3<f64> {
        self.pose.inverse() * p
    }

    /// World-frame axis-aligned footprint of the panel.
    pub fn footprint(&self) -> Aabb {
        let (hx, hy) = self.half_extents();
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for (sx, sy) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
            let c = self.pose * Point3::new(sx * hx, sy * hy, 0.0);
            for i in 0..3 {
                min[i] = min[i].min(c[i]);
                max[i] = max[i].max(c[i]);
            }
        }
        Aabb::new(min, max)
    }
}

/// A validated scene. All poses are expressed in base_link.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    pub static_boxes: Vec<StaticBox>,
    pub objects: Vec<SceneObject>,
    pub keyboard: Option<Keyboard>,
    pub camera: CameraModel,
    pub arm_base_pose: Pose,
    pub head: HeadSpec,
    pub workspace: Aabb,
    pub work_area: Option<Aabb>,
}

fn check_quat(p: &Pose, what: &str) -> Result<()> {
    let n = p.rotation.quaternion().norm();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{what}: quaternion norm {n}")));
    }
    Ok(())
}

impl Scene {
    /// Validates a parsed file. `base_dir` resolves relative layout paths.
    pub fn from_file(file: SceneFile, base_dir: Option<&Path>) -> Result<Self> {
        if file.version != SCENE_SCHEMA_VERSION {
            return Err(Error::schema(format!(
                "scene version {} unsupported (expected {SCENE_SCHEMA_VERSION})",
                file.version
            )));
        }
        for b in &file.static_boxes {
            if !b.size.iter().all(|s| *s > 0.0) {
                return Err(Error::invalid(format!("box {} has non-positive size", b.label)));
            }
            check_quat(&b.pose, &b.label)?;
        }
        for o in &file.objects {
            if !o.shape.dimensions_positive() {
                return Err(Error::invalid(format!("object {} has non-positive size", o.name)));
            }
            check_quat(&o.pose, &o.name)?;
        }
        for (i, o) in file.objects.iter().enumerate() {
            if file.objects[..i].iter().any(|p| p.name == o.name) {
                return Err(Error::invalid(format!("duplicate object name {}", o.name)));
            }
        }
        file.camera.validate()?;
        if file.arm_base_pose != Pose::identity() {
            return Err(Error::invalid(
                "arm_base_pose must be identity: every pose is expressed in base_link",
            ));
        }
        if !(file.workspace.volume() > 0.0) {
            return Err(Error::invalid("workspace bounds have zero volume"));
        }
        let keyboard = match file.keyboard {
            None => None,
            Some(k) => {
                check_quat(&k.pose, "keyboard")?;
                let layout = match (&k.layout, k.layout_ref.as_str()) {
                    (Some(inline), _) => KeyboardLayout::from_file(inline.clone())?,
                    (None, "default") => KeyboardLayout::default_layout(),
                    (None, path) => {
                        let path = base_dir.map_or_else(|| Path::new(path).to_path_buf(), |d| d.join(path));
                        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                        KeyboardLayout::from_json(&text)?
                    }
                };
                Some(Keyboard {
                    pose: k.pose,
                    layout_ref: k.layout_ref,
                    layout,
                })
            }
        };
        if let (Some(k), Some(area)) = (&keyboard, &file.work_area) {
            if k.footprint().overlaps_xy(area) {
                return Err(Error::invalid("keyboard panel overlaps the table work area"));
            }
        }
        Ok(Scene {
            name: file.name,
            static_boxes: file.static_boxes,
            objects: file.objects,
            keyboard,
            camera: file.camera,
            arm_base_pose: file.arm_base_pose,
            head: file.head,
            workspace: file.workspace,
            work_area: file.work_area,
        })
    }

    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(text).map_err(|e| Error::schema(e.to_string()))?;
        Self::from_file(file, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent())
            .map_err(|e| Error::schema(format!("{}: {e}", path.display())))
    }

    /// Desk with table, user bounding box, keyboard panel, a wooden block and a tray.
    pub fn default_desk() -> Self {
        Self::from_json(include_str!("../../assets/scenes/desk.json"), None)
            .expect("built-in desk scene is valid")
    }

    /// Serializable form with the keyboard layout inlined, so the file is self-contained.
    pub fn to_file(&self) -> SceneFile {
        SceneFile {
            version: SCENE_SCHEMA_VERSION,
            name: self.name.clone(),
            static_boxes: self.static_boxes.clone(),
            objects: self.objects.clone(),
            keyboard: self.keyboard.as_ref().map(|k| KeyboardFile {
                pose: k.pose,
                layout_ref: k.layout_ref.clone(),
                layout: Some(k.layout.to_file()),
            }),
            camera: self.camera.clone(),
            arm_base_pose: self.arm_base_pose,
            head: self.head,
            workspace: self.workspace,
            work_area: self.work_area,
        }
    }

    /// A scene with only a camera and workspace bounds.
    pub fn empty(camera: CameraModel, workspace: Aabb) -> Self {
        Scene {
            name: String::new(),
            static_boxes: Vec::new(),
            objects: Vec::new(),
            keyboard: None,
            camera,
            arm_base_pose: Pose::identity(),
            head: HeadSpec::default(),
            workspace,
            work_area: None,
        }
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name == name)
    }

    pub fn head_position(&self) -> Point3<f64> {
        Point3::from(self.head.position)
    }
}

/// The head-mounted laser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserRay {
    pub origin: [f64; 3],
    /// Unit direction.
    pub direction: [f64; 3],
    pub on: bool,
}

impl LaserRay {
    /// Normalizes `direction`; a zero direction yields a ray that is off.
    pub fn new(origin: Point3<f64>, direction: Vec3, on: bool) -> Self {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return LaserRay {
                origin: origin.into(),
                direction: [1.0, 0.0, 0.0],
                on: false,
            };
        }
        let d = direction / n;
        LaserRay {
            origin: origin.into(),
            direction: d.into(),
            on,
        }
    }

    pub fn towards(origin: Point3<f64>, target: Point3<f64>) -> Self {
        Self::new(origin, target - origin, true)
    }

    pub fn off(origin: Point3<f64>) -> Self {
        LaserRay {
            origin: origin.into(),
            direction: [1.0, 0.0, 0.0],
            on: false,
        }
    }

    pub fn ray(&self) -> Ray {
        Ray {
            origin: Point3::from(self.origin),
            dir: Vector3::from(self.direction),
        }
    }
}

/// Nearest hit of the laser with scene geometry (visible boxes, objects, keyboard panel).
pub fn cast_laser(scene: &Scene, ray: &LaserRay) -> Option<Point3<f64>> {
    cast_laser_with(scene, ray, &[])
}

/// As [`cast_laser`], also testing extra capsules such as the arm links.
pub fn cast_laser_with(scene: &Scene, ray: &LaserRay, extra: &[Capsule]) -> Option<Point3<f64>> {
    if !ray.on {
        return None;
    }
    let r = ray.ray();
    let mut best = f64::INFINITY;
    let mut consider = |hit: Option<(f64, Vec3)>| {
        if let Some((t, _)) = hit {
            if t < best {
                best = t;
            }
        }
    };
    for b in scene.static_boxes.iter().filter(|b| b.visible) {
        consider(Shape::Box { size: b.size }.ray_hit(&b.pose, &r));
    }
    for o in &scene.objects {
        consider(o.shape.ray_hit(&o.pose, &r));
    }
    if let Some(k) = &scene.keyboard {
        let (hx, hy) = k.half_extents();
        consider(ray_rect(&r, &k.pose, hx, hy));
    }
    for c in extra {
        consider(c.ray_hit(&r));
    }
    best.is_finite().then(|| r.at(best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PoseDef;

    fn plain_scene() -> Scene {
        let cam = CameraModel::default();
        Scene::empty(cam, Aabb::new([-5.0; 3], [5.0; 3]))
    }

    #[test]
    fn default_desk_loads_and_round_trips() {
        let s = Scene::default_desk();
        assert!(s.keyboard.is_some());
        let text = serde_json::to_string(&s.to_file()).unwrap();
        let back = Scene::from_json(&text, None).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn floor_hit_straight_down() {
        let mut s = plain_scene();
        s.static_boxes.push(StaticBox {
            label: "table".into(),
            pose: Pose::translation(0.0, 0.0, -0.5),
            size: [10.0, 10.0, 1.0],
            color: None,
            visible: true,
        });
        let ray = LaserRay::new(Point3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -1.0), true);
        let p = cast_laser(&s, &ray).unwrap();
        assert!((p - Point3::origin()).norm() < 1e-12);
    }

    #[test]
    fn sphere_hit_along_x() {
        let mut s = plain_scene();
        s.objects.push(SceneObject {
            name: "ball".into(),
            shape: Shape::Sphere { radius: 0.5 },
            pose: Pose::translation(2.0, 0.0, 0.0),
            graspable: false,
            color: None,
        });
        let ray = LaserRay::new(Point3::origin(), Vec3::x(), true);
        let p = cast_laser(&s, &ray).unwrap();
        assert!((p - Point3::new(1.5, 0.0, 0.0)).norm() < 1e-12);
        let off = LaserRay { on: false, ..ray };
        assert!(cast_laser(&s, &off).is_none());
        let miss = LaserRay::new(Point3::origin(), -Vec3::x(), true);
        assert!(cast_laser(&s, &miss).is_none());
    }

    #[test]
    fn invisible_boxes_do_not_stop_the_laser() {
        let s = Scene::default_desk();
        let user = s.static_boxes.iter().find(|b| b.label == "user_bbox").unwrap();
        assert!(!user.visible);
        let head = s.head_position();
        let ray = LaserRay::towards(head, Point3::new(0.5, 0.0, 0.0));
        let p = cast_laser(&s, &ray).unwrap();
        assert!(p.z.abs() < 1e-9, "hit {p:?}");
    }

    #[test]
    fn rejects_bad_scenes() {
        let good = Scene::default_desk().to_file();

        let mut f = good.clone();
        f.version = 7;
        assert!(matches!(Scene::from_file(f, None), Err(Error::Schema(_))));

        let mut f = good.clone();
        f.static_boxes[0].size[1] = 0.0;
        assert!(Scene::from_file(f, None).is_err());

        let mut f = good.clone();
        let k = f.keyboard.as_mut().unwrap();
        let area = f.work_area.unwrap().center();
        k.pose = Pose::translation(area.x, area.y, 0.001);
        assert!(Scene::from_file(f, None).is_err());

        let mut text = serde_json::to_value(&good).unwrap();
        text["objects"][0]["pose"]["orientation"] = serde_json::json!([0.0, 0.0, 0.0, 1.001]);
        assert!(Scene::from_json(&text.to_string(), None).is_err());

        let mut text = serde_json::to_value(&good).unwrap();
        text["surprise"] = serde_json::json!(1);
        assert!(Scene::from_json(&text.to_string(), None).is_err());
    }

    #[test]
    fn pose_def_round_trip() {
        let p = crate::geometry::pose_from_xyz_rpy([0.1, 0.2, 0.3], [0.3, -0.2, 1.0]);
        let d = PoseDef::from(&p);
        assert!((d.to_pose().to_homogeneous() - p.to_homogeneous()).abs().max() < 1e-15);
    }
}

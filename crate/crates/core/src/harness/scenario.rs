use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::session::TickInput;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::kinematics::DOF;
use crate::scene::{LaserRay, Scene};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Dwell-to-goal plus virtual keyboard.
    #[default]
    Laser,
    /// Head orientation mapped to a planar tcp velocity.
    ImuBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub name: String,
    pub position: [f64; 3],
    /// Stopping within this distance counts as reaching the target, m.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Success {
    /// The object rests inside the region and is not held.
    ObjectInRegion { object: String, region: Aabb },
    /// Every target has been reached at some stop of the tcp.
    ReachTargets,
}

/// One scripted input change. Laser keyframes hold until the next one; head keyframes are
/// interpolated linearly in roll/pitch/yaw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Keyframe {
    Off {
        t: f64,
    },
    Ray {
        t: f64,
        /// Defaults to the head position.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        origin: Option<[f64; 3]>,
        direction: [f64; 3],
    },
    /// Point the laser from the head at a fixed point, optionally shaken uniformly within a disk
    /// of radius `jitter` in the horizontal plane every tick.
    Aim {
        t: f64,
        target: [f64; 3],
        #[serde(default)]
        jitter: f64,
    },
    AimButton {
        t: f64,
        button: String,
        /// Offset from the button centre in the keyboard plane, m.
        #[serde(default)]
        offset: [f64; 2],
    },
    /// Tracks the centre of the object's top face.
    AimObject {
        t: f64,
        object: String,
    },
    Head {
        t: f64,
        rpy: [f64; 3],
    },
}

impl Keyframe {
    pub fn t(&self) -> f64 {
        match *self {
            Keyframe::Off { t }
            | Keyframe::Ray { t, .. }
            | Keyframe::Aim { t, .. }
            | Keyframe::AimButton { t, .. }
            | Keyframe::AimObject { t, .. }
            | Keyframe::Head { t, .. } => t,
        }
    }

    fn is_head(&self) -> bool {
        matches!(self, Keyframe::Head { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Input {
    Scripted {
        #[serde(default)]
        keyframes: Vec<Keyframe>,
    },
    /// Fed tick by tick from outside, e.g. the bridge.
    Live,
}

fn desk() -> String {
    "desk".into()
}

fn open() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    /// `"desk"` for the built-in scene, otherwise a path relative to the scenario file.
    #[serde(default = "desk")]
    pub scene: String,
    #[serde(default)]
    pub controller: ControllerKind,
    pub input: Input,
    #[serde(default)]
    pub targets: Vec<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<Success>,
    #[serde(default)]
    pub seed: u64,
    /// Time limit, s.
    pub duration: f64,
    #[serde(default)]
    pub config: RunConfig,
    #[serde(default)]
    pub initial_q: [f64; DOF],
    #[serde(default = "open")]
    pub initial_gripper: f64,
    /// Directory that relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut s: Scenario = serde_json::from_str(text).map_err(|e| Error::schema(e.to_string()))?;
        if s.version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::schema(format!(
                "scenario version {} unsupported (expected {SCENARIO_SCHEMA_VERSION})",
                s.version
            )));
        }
        s.base_dir = base_dir.map(Path::to_path_buf);
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent()).map_err(|e| Error::schema(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        match &self.base_dir {
            Some(d) if rel.is_relative() => d.join(rel),
            _ => rel.to_path_buf(),
        }
    }

    pub fn load_scene(&self) -> Result<Scene> {
        if self.scene == "desk" {
            Ok(Scene::default_desk())
        } else {
            Scene::load(&self.resolve(Path::new(&self.scene)))
        }
    }

    /// Ticks after tick 0 before the time limit.
    pub fn ticks(&self, rate: f64) -> u64 {
        (self.duration * rate).round() as u64
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        match &self.input {
            Input::Scripted { keyframes } => keyframes,
            Input::Live => &[],
        }
    }

    /// Checks everything that can be checked against the scene before running.
    pub fn validate(&self, scene: &Scene) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("scenario {}: {m}", self.name)));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.initial_gripper) {
            return bad("initial_gripper must be in [0, 1]".into());
        }
        let mut last = 0.0;
        for (i, k) in self.keyframes().iter().enumerate() {
            let t = k.t();
            if !(t >= last && t.is_finite()) {
                return bad(format!("keyframe {i}: times must be nondecreasing and start at 0 or later"));
            }
            last = t;
            match k {
                Keyframe::Ray { direction, .. } if Vec3::from(*direction).norm() < 1e-12 => {
                    return bad(format!("keyframe {i}: zero ray direction"));
                }
                Keyframe::Aim { jitter, .. } if *jitter < 0.0 => {
                    return bad(format!("keyframe {i}: negative jitter"));
                }
                Keyframe::AimButton { button, .. } => {
                    let found = scene.keyboard.as_ref().is_some_and(|kb| kb.layout.button(button).is_some());
                    if !found {
                        return bad(format!("keyframe {i}: unknown button {button}"));
                    }
                }
                Keyframe::AimObject { object, .. } if scene.object_index(object).is_none() => {
                    return bad(format!("keyframe {i}: unknown object {object}"));
                }
                _ => {}
            }
        }
        for t in &self.targets {
            if !(t.radius > 0.0) {
                return bad(format!("target {}: radius must be positive", t.name));
            }
        }
        match &self.success {
            Some(Success::ObjectInRegion { object, .. }) if scene.object_index(object).is_none() => {
                return bad(format!("success refers to unknown object {object}"));
            }
            Some(Success::ReachTargets) if self.targets.is_empty() => {
                return bad("reach_targets needs at least one target".into());
            }
            _ => {}
        }
        self.config.validate()
    }
}

/// Head orientation looking along `dir`, no roll.
pub fn look_orientation(dir: &Vec3) -> UnitQuaternion<f64> {
    let d = dir.normalize();
    let yaw = d.y.atan2(d.x);
    let pitch = (-d.z).clamp(-1.0, 1.0).asin();
    UnitQuaternion::from_euler_angles(0.0, pitch, yaw)
}

/// Default head orientation: facing the robot along -x.
pub fn neutral_head() -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(0.0, 0.0, PI)
}

pub fn quat_to_array(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.i, q.j, q.k, q.w]
}

/// Turns scripted keyframes into one [`TickInput`] per tick.
#[derive(Debug, Clone)]
pub struct ScriptPlayer {
    laser: Vec<Keyframe>,
    head: Vec<(f64, [f64; 3])>,
    rng: ChaCha8Rng,
    last_head: UnitQuaternion<f64>,
}

impl ScriptPlayer {
    pub fn new(keyframes: &[Keyframe], seed: u64) -> Self {
        let head = keyframes
            .iter()
            .filter_map(|k| match k {
                Keyframe::Head { t, rpy } => Some((*t, *rpy)),
                _ => None,
            })
            .collect();
        ScriptPlayer {
            laser: keyframes.iter().filter(|k| !k.is_head()).cloned().collect(),
            head,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a5e),
            last_head: neutral_head(),
        }
    }

    fn head_at(&self, t: f64) -> Option<UnitQuaternion<f64>> {
        let (first, last) = (self.head.first()?, self.head.last()?);
        let rpy = if t <= first.0 {
            first.1
        } else if t >= last.0 {
            last.1
        } else {
            let i = self.head.partition_point(|(kt, _)| *kt <= t);
            let ((t0, a), (t1, b)) = (self.head[i - 1], self.head[i]);
            let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
            std::array::from_fn(|j| a[j] + s * (b[j] - a[j]))
        };
        Some(UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]))
    }

    pub fn input(&mut self, t: f64, scene: &Scene) -> TickInput {
        let head_pos = scene.head_position();
        let active = self.laser.iter().rev().find(|k| k.t() <= t + 1e-9);
        let laser = match active {
            None | Some(Keyframe::Off { .. }) | Some(Keyframe::Head { .. }) => LaserRay::off(head_pos),
            Some(Keyframe::Ray { origin, direction, .. }) => {
                let o = origin.map_or(head_pos, Point3::from);
                LaserRay::new(o, Vector3::from(*direction), true)
            }
            Some(Keyframe::Aim { target, jitter, .. }) => {
                let mut p = Point3::from(*target);
                if *jitter > 0.0 {
                    let r = jitter * self.rng.gen::<f64>().sqrt();
                    let a = 2.0 * PI * self.rng.gen::<f64>();
                    p.x += r * a.cos();
                    p.y += r * a.sin();
                }
                LaserRay::towards(head_pos, p)
            }
            Some(Keyframe::AimButton { button, offset, .. }) => {
                match scene.keyboard.as_ref().and_then(|kb| {
                    let b = kb.layout.button(button)?;
                    Some(kb.pose * Point3::new(b.center[0] + offset[0], b.center[1] + offset[1], 0.0))
                }) {
                    Some(p) => LaserRay::towards(head_pos, p),
                    None => LaserRay::off(head_pos),
                }
            }
            Some(Keyframe::AimObject { object, .. }) => match scene.object_index(object) {
                Some(i) => {
                    let o = &scene.objects[i];
                    let mut p = Point3::from(o.pose.translation.vector);
                    p.z += o.shape.half_height();
                    LaserRay::towards(head_pos, p)
                }
                None => LaserRay::off(head_pos),
            },
        };
        let head = match self.head_at(t) {
            Some(q) => q,
            None if laser.on => look_orientation(&Vector3::from(laser.direction)),
            None => self.last_head,
        };
        self.last_head = head;
        TickInput {
            laser,
            head: quat_to_array(&head),
        }
    }
}

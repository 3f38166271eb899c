use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::{CameraModel, Scene};
use crate::geometry::{ray_rect, Capsule, Pose, Ray, Shape, Vec3, RAY_EPS};
use crate::kinematics::{link_capsules, ArmModel, JointState};

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> [u8; 3] {
        let i = 3 * (v * self.width + u);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, u: usize, v: usize, c: [u8; 3]) {
        let i = 3 * (v * self.width + u);
        self.data[i..i + 3].copy_from_slice(&c);
    }
}

/// Image-layout point cloud in the camera frame; invalid points hold NaN.
#[derive(Debug, Clone)]
pub struct OrganizedCloud {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Point3<f64>>,
}

impl OrganizedCloud {
    /// Marker stored at pixels without geometry.
    pub const INVALID: Point3<f64> = Point3::new(f64::NAN, f64::NAN, f64::NAN);

    pub fn new_invalid(width: usize, height: usize) -> Self {
        OrganizedCloud {
            width,
            height,
            points: vec![Self::INVALID; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> Option<Point3<f64>> {
        let p = self.points[v * self.width + u];
        p.x.is_finite().then_some(p)
    }

    pub fn set(&mut self, u: usize, v: usize, p: Point3<f64>) {
        self.points[v * self.width + u] = p;
    }

    pub fn invalidate(&mut self, u: usize, v: usize) {
        self.points[v * self.width + u] = Self::INVALID;
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.points[v * self.width + u].x.is_finite()
    }

    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.x.is_finite()).count()
    }
}

impl PartialEq for OrganizedCloud {
    /// Bitwise comparison, so two invalid points compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| a.coords.iter().zip(b.coords.iter()).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub rgb: RgbImage,
    pub cloud: OrganizedCloud,
    pub stamp: f64,
}

/// Red Gaussian painted at the visible laser hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserBlob {
    /// Standard deviation in pixels.
    pub sigma: f64,
    /// Red value at the centre.
    pub peak: f64,
}

impl Default for LaserBlob {
    fn default() -> Self {
        LaserBlob {
            sigma: 1.5,
            peak: 255.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Surface {
    Shape { shape: Shape, pose: Pose, inv: Pose },
    Capsule(Capsule),
    Panel { pose: Pose, half: (f64, f64), buttons: Vec<([f64; 2], [f64; 2])> },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Primitive {
    pub surface: Surface,
    pub color: [u8; 3],
}

const TABLE_COLOR: [u8; 3] = [150, 128, 104];
const BOX_COLOR: [u8; 3] = [120, 120, 130];
const OBJECT_COLOR: [u8; 3] = [172, 132, 92];
const ARM_COLOR: [u8; 3] = [88, 94, 110];
const PANEL_COLOR: [u8; 3] = [236, 236, 232];
const BUTTON_COLOR: [u8; 3] = [196, 200, 210];

impl Primitive {
    pub fn shape(shape: Shape, pose: Pose, color: [u8; 3]) -> Self {
        Primitive {
            surface: Surface::Shape {
                shape,
                pose,
                inv: pose.inverse(),
            },
            color,
        }
    }

    pub fn capsule(c: Capsule) -> Self {
        Primitive {
            surface: Surface::Capsule(c),
            color: ARM_COLOR,
        }
    }

    pub fn hit(&self, ray: &Ray) -> Option<(f64, Vec3)> {
        match &self.surface {
            Surface::Shape { shape, pose, inv } => {
                let local = Ray {
                    origin: inv * ray.origin,
                    dir: inv.rotation * ray.dir,
                };
                shape
                    .local_ray_hit(&local)
                    .map(|(t, n)| (t, pose.rotation * n))
            }
            Surface::Capsule(c) => c.ray_hit(ray),
            Surface::Panel { pose, half, .. } => ray_rect(ray, pose, half.0, half.1),
        }
    }

    fn bounding_sphere(&self) -> (Point3<f64>, f64) {
        match &self.surface {
            Surface::Shape { shape, pose, .. } => {
                (Point3::from(pose.translation.vector), shape.bounding_radius())
            }
            Surface::Capsule(c) => c.bounding_sphere(),
            Surface::Panel { pose, half, .. } => (
                Point3::from(pose.translation.vector),
                (half.0 * half.0 + half.1 * half.1).sqrt(),
            ),
        }
    }

    fn base_color(&self, p: &Point3<f64>) -> [u8; 3] {
        if let Surface::Panel { pose, buttons, .. } = &self.surface {
            let l = pose.inverse_transform_point(p);
            let on_button = buttons.iter().any(|(c, s)| {
                (l.x - c[0]).abs() <= 0.5 * s[0] && (l.y - c[1]).abs() <= 0.5 * s[1]
            });
            return if on_button { BUTTON_COLOR } else { self.color };
        }
        self.color
    }
}

fn shade(color: [u8; 3], normal: &Vec3, view: &Vec3) -> [u8; 3] {
    let n = if normal.dot(view) > 0.0 { -normal } else { *normal };
    let light = Vec3::new(0.3, -0.2, 1.0).normalize();
    let k = 0.6 + 0.4 * n.dot(&light).max(0.0);
    color.map(|c| (c as f64 * k).round().clamp(0.0, 255.0) as u8)
}

/// Primitives seen by the camera and the laser, excluding the arm. Indices listed in `skip`
/// are left out (used for objects that move with the gripper).
pub(crate) fn scene_primitives(scene: &Scene, skip: &[usize]) -> Vec<Primitive> {
    let mut out = Vec::new();
    for b in scene.static_boxes.iter().filter(|b| b.visible) {
        let color = b
            .color
            .unwrap_or(if b.label == "table" { TABLE_COLOR } else { BOX_COLOR });
        out.push(Primitive::shape(Shape::Box { size: b.size }, b.pose, color));
    }
    for (i, o) in scene.objects.iter().enumerate() {
        if !skip.contains(&i) {
            out.push(Primitive::shape(o.shape, o.pose, o.color.unwrap_or(OBJECT_COLOR)));
        }
    }
    if let Some(k) = &scene.keyboard {
        out.push(Primitive {
            surface: Surface::Panel {
                pose: k.pose,
                half: k.half_extents(),
                buttons: k.layout.buttons.iter().map(|b| (b.center, b.size)).collect(),
            },
            color: PANEL_COLOR,
        });
    }
    out
}

pub(crate) fn object_primitives(scene: &Scene, indices: &[usize]) -> Vec<Primitive> {
    indices
        .iter()
        .map(|&i| {
            let o = &scene.objects[i];
            Primitive::shape(o.shape, o.pose, o.color.unwrap_or(OBJECT_COLOR))
        })
        .collect()
}

/// Conservative pixel rectangle `[u0, u1) x [v0, v1)` covering a world-space sphere.
fn screen_rect(cam: &CameraModel, center: &Point3<f64>, radius: f64) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = (cam.width(), cam.height());
    let c = cam.world_to_camera(center);
    if c.z + radius <= 0.0 {
        return None;
    }
    if c.z - radius <= 1e-3 {
        return Some((0, w, 0, h));
    }
    let k = &cam.intrinsics;
    let (z0, z1) = (c.z - radius, c.z + radius);
    let span = |x: f64, f: f64, c0: f64| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for xx in [x - radius, x + radius] {
            for zz in [z0, z1] {
                let s = f * xx / zz + c0;
                lo = lo.min(s);
                hi = hi.max(s);
            }
        }
        (lo, hi)
    };
    let (ulo, uhi) = span(c.x, k.fx, k.cx);
    let (vlo, vhi) = span(c.y, k.fy, k.cy);
    let clip = |lo: f64, hi: f64, n: usize| {
        let a = (lo - 1.0).floor().max(0.0).min(n as f64) as usize;
        let b = (hi + 2.0).ceil().max(0.0).min(n as f64) as usize;
        (a, b)
    };
    let (u0, u1) = clip(ulo, uhi, w);
    let (v0, v1) = clip(vlo, vhi, h);
    (u0 < u1 && v0 < v1).then_some((u0, u1, v0, v1))
}

#[derive(Clone)]
struct Layer {
    depth: Vec<f64>,
    frame: CameraFrame,
}

impl Layer {
    fn empty(w: usize, h: usize) -> Self {
        Layer {
            depth: vec![f64::INFINITY; w * h],
            frame: CameraFrame {
                rgb: RgbImage::new(w, h),
                cloud: OrganizedCloud::new_invalid(w, h),
                stamp: 0.0,
            },
        }
    }
}

fn pixel_rays(cam: &CameraModel) -> Vec<Ray> {
    let (w, h) = (cam.width(), cam.height());
    let mut rays = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            rays.push(cam.pixel_ray(u as f64, v as f64));
        }
    }
    rays
}

type Rect = (usize, usize, usize, usize);

/// Z-buffers `prims` into `layer`, appending each primitive's screen rectangle to `touched`.
fn draw(layer: &mut Layer, cam: &CameraModel, rays: &[Ray], prims: &[Primitive], touched: &mut Vec<Rect>) {
    let w = cam.width();
    for p in prims {
        let (c, r) = p.bounding_sphere();
        let Some(rect) = screen_rect(cam, &c, r) else {
            continue;
        };
        touched.push(rect);
        let (u0, u1, v0, v1) = rect;
        for v in v0..v1 {
            for u in u0..u1 {
                let i = v * w + u;
                let ray = &rays[i];
                if let Some((t, n)) = p.hit(ray) {
                    if t < layer.depth[i] {
                        let world = ray.at(t);
                        layer.depth[i] = t;
                        layer.frame.rgb.set(u, v, shade(p.base_color(&world), &n, &ray.dir));
                        layer.frame.cloud.set(u, v, cam.world_to_camera(&world));
                    }
                }
            }
        }
    }
}

fn restore(dst: &mut Layer, src: &Layer, (u0, u1, v0, v1): Rect) {
    let w = src.frame.rgb.width;
    for v in v0..v1 {
        let (a, b) = (v * w + u0, v * w + u1);
        dst.depth[a..b].copy_from_slice(&src.depth[a..b]);
        dst.frame.cloud.points[a..b].copy_from_slice(&src.frame.cloud.points[a..b]);
        dst.frame.rgb.data[3 * a..3 * b].copy_from_slice(&src.frame.rgb.data[3 * a..3 * b]);
    }
}

fn occluded(from: &Point3<f64>, to: &Point3<f64>, prims: &[&Primitive]) -> bool {
    let d = to - from;
    let dist = d.norm();
    if dist <= RAY_EPS {
        return false;
    }
    let ray = Ray::new(*from, d);
    prims
        .iter()
        .any(|p| p.hit(&ray).is_some_and(|(t, _)| t < dist - 1e-4))
}

fn paint_blob(rgb: &mut RgbImage, u_star: f64, v_star: f64, blob: &LaserBlob) -> Rect {
    let reach = (4.0 * blob.sigma).ceil() as i64 + 1;
    let (uc, vc) = (u_star.round() as i64, v_star.round() as i64);
    let clip = |x: i64, n: usize| x.clamp(0, n as i64) as usize;
    let rect = (
        clip(uc - reach, rgb.width),
        clip(uc + reach + 1, rgb.width),
        clip(vc - reach, rgb.height),
        clip(vc + reach + 1, rgb.height),
    );
    let two_s2 = 2.0 * blob.sigma * blob.sigma;
    for v in (vc - reach).max(0)..=(vc + reach).min(rgb.height as i64 - 1) {
        for u in (uc - reach).max(0)..=(uc + reach).min(rgb.width as i64 - 1) {
            let d2 = (u as f64 - u_star).powi(2) + (v as f64 - v_star).powi(2);
            let wgt = (-d2 / two_s2).exp();
            if wgt < 1e-4 {
                continue;
            }
            let [r, g, b] = rgb.get(u as usize, v as usize);
            let mix = |c: u8, target: f64| ((1.0 - wgt) * c as f64 + wgt * target).round().clamp(0.0, 255.0) as u8;
            rgb.set(u as usize, v as usize, [mix(r, blob.peak), mix(g, 0.0), mix(b, 0.0)]);
        }
    }
    rect
}

/// Renders frames, keeping the static part of the scene cached between calls. Only pixels
/// covered by moving geometry or the laser blob are redrawn each frame.
#[derive(Default)]
pub struct Renderer {
    pub blob: LaserBlob,
    cache: Option<Cache>,
}

struct Cache {
    camera: CameraModel,
    prims: Vec<Primitive>,
    rays: Vec<Ray>,
    base: Layer,
    work: Layer,
    dirty: Vec<Rect>,
}

impl Renderer {
    pub fn new(blob: LaserBlob) -> Self {
        Renderer { blob, cache: None }
    }

    /// `moving` lists object indices that are not part of the static layer (attached objects).
    pub fn render(
        &mut self,
        scene: &Scene,
        arm: &[Capsule],
        moving: &[usize],
        laser_hit: Option<Point3<f64>>,
        stamp: f64,
    ) -> CameraFrame {
        self.render_ref(scene, arm, moving, laser_hit, stamp).clone()
    }

    /// As [`Renderer::render`] but borrows the internal frame buffer.
    pub fn render_ref(
        &mut self,
        scene: &Scene,
        arm: &[Capsule],
        moving: &[usize],
        laser_hit: Option<Point3<f64>>,
        stamp: f64,
    ) -> &CameraFrame {
        let cam = &scene.camera;
        let prims = scene_primitives(scene, moving);
        let stale = self
            .cache
            .as_ref()
            .map_or(true, |c| c.camera != *cam || c.prims != prims);
        if stale {
            let rays = match self.cache.take() {
                Some(c) if c.camera == *cam => c.rays,
                _ => pixel_rays(cam),
            };
            let mut base = Layer::empty(cam.width(), cam.height());
            draw(&mut base, cam, &rays, &prims, &mut Vec::new());
            self.cache = Some(Cache {
                camera: cam.clone(),
                prims,
                rays,
                work: base.clone(),
                base,
                dirty: Vec::new(),
            });
        }
        let cache = self.cache.as_mut().expect("cache filled above");
        for rect in cache.dirty.drain(..) {
            restore(&mut cache.work, &cache.base, rect);
        }
        let mut dynamic: Vec<Primitive> = arm.iter().copied().map(Primitive::capsule).collect();
        dynamic.extend(object_primitives(scene, moving));
        draw(&mut cache.work, cam, &cache.rays, &dynamic, &mut cache.dirty);

        if let Some(hit) = laser_hit {
            let all: Vec<&Primitive> = cache.prims.iter().chain(dynamic.iter()).collect();
            let (w, h) = (cam.width() as f64, cam.height() as f64);
            let visible = cam
                .project_world(&hit)
                .filter(|&(u, v)| u > -0.5 && v > -0.5 && u < w - 0.5 && v < h - 0.5)
                .filter(|_| !occluded(&cam.origin(), &hit, &all));
            if let Some((u, v)) = visible {
                let rect = paint_blob(&mut cache.work.frame.rgb, u, v, &self.blob);
                cache.dirty.push(rect);
            }
        }
        cache.work.frame.stamp = stamp;
        &cache.work.frame
    }
}

/// One-shot render of the scene with the arm at `state`.
pub fn render_frame(
    scene: &Scene,
    model: &ArmModel,
    state: &JointState,
    laser_hit: Option<Point3<f64>>,
    blob: &LaserBlob,
) -> CameraFrame {
    let arm = link_capsules(model, &state.q);
    Renderer::new(*blob).render(scene, &arm, &[], laser_hit, state.stamp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::scene::{cast_laser, LaserRay, SceneObject};

    fn empty() -> Scene {
        Scene::empty(CameraModel::default(), Aabb::new([-5.0; 3], [5.0; 3]))
    }

    #[test]
    fn empty_scene_renders_invalid_cloud() {
        let mut r = Renderer::default();
        let f = r.render(&empty(), &[], &[], None, 0.0);
        assert_eq!(f.cloud.valid_count(), 0);
        assert_eq!((f.rgb.width, f.rgb.height), (640, 480));
    }

    #[test]
    fn every_valid_point_reprojects_to_its_pixel() {
        let scene = Scene::default_desk();
        let model = ArmModel::default_arm();
        let f = render_frame(&scene, &model, &JointState::new([0.0; 6]), None, &LaserBlob::default());
        let mut n = 0;
        for v in 0..f.cloud.height {
            for u in 0..f.cloud.width {
                if let Some(p) = f.cloud.get(u, v) {
                    let (pu, pv) = scene.camera.project(&p).unwrap();
                    assert!((pu - u as f64).abs() <= 0.5 && (pv - v as f64).abs() <= 0.5);
                    n += 1;
                }
            }
        }
        assert!(n > 100_000);
    }

    fn brightest_red(f: &CameraFrame) -> (usize, usize, u8) {
        let mut best = (0, 0, 0u8);
        for v in 0..f.rgb.height {
            for u in 0..f.rgb.width {
                let [r, g, b] = f.rgb.get(u, v);
                let s = r.saturating_sub(g.max(b));
                if s > best.2 {
                    best = (u, v, s);
                }
            }
        }
        best
    }

    #[test]
    fn blob_lands_on_true_projection() {
        let scene = Scene::default_desk();
        let model = ArmModel::default_arm();
        let hit = cast_laser(
            &scene,
            &LaserRay::towards(scene.head_position(), Point3::new(0.7, 0.2, 0.0)),
        )
        .unwrap();
        let f = render_frame(&scene, &model, &JointState::new([0.0; 6]), Some(hit), &LaserBlob::default());
        let (u_star, v_star) = scene.camera.project_world(&hit).unwrap();
        let (u, v, s) = brightest_red(&f);
        assert!(s > 200);
        assert!((u as f64 - u_star).abs() <= 2.0 && (v as f64 - v_star).abs() <= 2.0);
    }

    #[test]
    fn occluded_hit_paints_nothing() {
        let mut scene = Scene::default_desk();
        let hit = Point3::new(0.7, 0.2, 0.0);
        let mid = nalgebra::center(&hit, &scene.camera.origin());
        scene.objects.push(SceneObject {
            name: "lid".into(),
            shape: Shape::Box { size: [0.1, 0.1, 0.02] },
            pose: Pose::translation(mid.x, mid.y, mid.z),
            graspable: false,
            color: None,
        });
        let model = ArmModel::default_arm();
        let q = JointState::new([0.0; 6]);
        let f = render_frame(&scene, &model, &q, Some(hit), &LaserBlob::default());
        assert!(brightest_red(&f).2 < 80);
    }

    #[test]
    fn cached_render_matches_fresh_render() {
        let scene = Scene::default_desk();
        let model = ArmModel::default_arm();
        let mut r = Renderer::default();
        let q1 = [0.3, 0.4, -0.5, 0.0, 0.3, 0.0];
        let q2 = [-0.2, 0.6, -0.2, 0.1, 0.5, 0.2];
        r.render(&scene, &link_capsules(&model, &q1), &[], None, 0.0);
        let cached = r.render(&scene, &link_capsules(&model, &q2), &[], None, 0.0);
        let fresh = render_frame(&scene, &model, &JointState::new(q2), None, &LaserBlob::default());
        assert_eq!(cached, fresh);
    }
}

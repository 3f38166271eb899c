use nalgebra::Point3;

use crate::geometry::{segment_aabb_distance, segment_obb_distance, segment_segment_distance, Aabb, Capsule, Pose, Shape, Vec3};
use crate::kinematics::{link_capsules, ArmModel, DOF};
use crate::scene::{CameraModel, OrganizedCloud, Scene};

use super::PlanningConfig;

/// Dense occupancy over an axis-aligned region; cell `(i, j, k)` spans
/// `origin + [i, i+1) * resolution` on each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub resolution: f64,
    /// Cell index of the region's lowest corner.
    lo: [i64; 3],
    dims: [usize; 3],
    cells: Vec<bool>,
    count: usize,
    /// Occupied keys bucketed by `BLOCK`-cell cubes, so queries visit only nearby cells.
    bdims: [usize; 3],
    blocks: Vec<Vec<[i64; 3]>>,
}

const BLOCK: i64 = 8;

impl VoxelGrid {
    /// Empty grid covering `region` in world-aligned cells.
    pub fn new(region: &Aabb, resolution: f64) -> Self {
        assert!(resolution > 0.0, "voxel resolution must be positive");
        let lo: [i64; 3] = std::array::from_fn(|i| (region.min[i] / resolution).floor() as i64);
        let hi: [i64; 3] = std::array::from_fn(|i| (region.max[i] / resolution).floor() as i64);
        let dims: [usize; 3] = std::array::from_fn(|i| (hi[i] - lo[i] + 1) as usize);
        let bdims: [usize; 3] = std::array::from_fn(|i| dims[i].div_ceil(BLOCK as usize));
        VoxelGrid {
            resolution,
            lo,
            dims,
            cells: vec![false; dims[0] * dims[1] * dims[2]],
            count: 0,
            bdims,
            blocks: vec![Vec::new(); bdims[0] * bdims[1] * bdims[2]],
        }
    }

    pub fn key(&self, p: &Point3<f64>) -> [i64; 3] {
        std::array::from_fn(|i| (p[i] / self.resolution).floor() as i64)
    }

    fn index(&self, key: [i64; 3]) -> Option<usize> {
        let mut idx = 0usize;
        for i in (0..3).rev() {
            let k = key[i] - self.lo[i];
            if k < 0 || k as usize >= self.dims[i] {
                return None;
            }
            idx = idx * self.dims[i] + k as usize;
        }
        Some(idx)
    }

    /// Block coordinates of an in-grid key.
    fn block_of(&self, key: [i64; 3]) -> [usize; 3] {
        std::array::from_fn(|i| ((key[i] - self.lo[i]) / BLOCK) as usize)
    }

    fn block_index(&self, b: [usize; 3]) -> usize {
        (b[2] * self.bdims[1] + b[1]) * self.bdims[0] + b[0]
    }

    /// Occupied keys in blocks overlapping the clipped key range.
    fn keys_in(&self, r: &[(i64, i64); 3]) -> impl Iterator<Item = [i64; 3]> + '_ {
        let b0 = self.block_of([r[0].0, r[1].0, r[2].0]);
        let b1 = self.block_of([r[0].1, r[1].1, r[2].1]);
        let r = *r;
        (b0[2]..=b1[2])
            .flat_map(move |k| (b0[1]..=b1[1]).flat_map(move |j| (b0[0]..=b1[0]).map(move |i| [i, j, k])))
            .flat_map(move |b| self.blocks[self.block_index(b)].iter().copied())
            .filter(move |key| (0..3).all(|i| key[i] >= r[i].0 && key[i] <= r[i].1))
    }

    pub fn center(&self, key: [i64; 3]) -> Point3<f64> {
        Point3::new(
            (key[0] as f64 + 0.5) * self.resolution,
            (key[1] as f64 + 0.5) * self.resolution,
            (key[2] as f64 + 0.5) * self.resolution,
        )
    }

    /// Marks the cell containing `p`; points outside the grid region are ignored.
    pub fn insert(&mut self, p: &Point3<f64>) -> bool {
        match self.index(self.key(p)) {
            Some(i) => {
                if !self.cells[i] {
                    self.cells[i] = true;
                    self.count += 1;
                    let key = self.key(p);
                    let b = self.block_index(self.block_of(key));
                    self.blocks[b].push(key);
                }
                true
            }
            None => false,
        }
    }

    pub fn is_occupied(&self, key: [i64; 3]) -> bool {
        self.index(key).is_some_and(|i| self.cells[i])
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Occupied cell keys in ascending `(x, y, z)` order.
    pub fn occupied(&self) -> Vec<[i64; 3]> {
        let mut out: Vec<[i64; 3]> = self.blocks.iter().flatten().copied().collect();
        out.sort_unstable();
        out
    }

    /// Key ranges of cells overlapping the box `[min, max]`, clipped to the grid; `None` when
    /// the box misses the grid.
    fn range(&self, min: &Point3<f64>, max: &Point3<f64>) -> Option<[(i64, i64); 3]> {
        let r: [(i64, i64); 3] = std::array::from_fn(|i| {
            let a = ((min[i] / self.resolution).floor() as i64).max(self.lo[i]);
            let b = ((max[i] / self.resolution).floor() as i64).min(self.lo[i] + self.dims[i] as i64 - 1);
            (a, b)
        });
        r.iter().all(|(a, b)| a <= b).then_some(r)
    }

    /// Distance from a segment to the cube of cell `key`.
    pub fn segment_distance(&self, key: [i64; 3], a: &Point3<f64>, b: &Point3<f64>) -> f64 {
        let c = self.center(key).coords;
        let half = Vec3::repeat(0.5 * self.resolution);
        segment_aabb_distance(&(a.coords - c), &(b.coords - c), &half)
    }

    /// Minimum over occupied cells of `segment distance - radius`, searching only cells within
    /// `radius + reach` of the segment; returns `reach` when none is closer.
    pub fn capsule_clearance(&self, a: &Point3<f64>, b: &Point3<f64>, radius: f64, reach: f64) -> f64 {
        if self.count == 0 {
            return reach;
        }
        let pad = radius + reach;
        let min = Point3::new(a.x.min(b.x) - pad, a.y.min(b.y) - pad, a.z.min(b.z) - pad);
        let max = Point3::new(a.x.max(b.x) + pad, a.y.max(b.y) + pad, a.z.max(b.z) + pad);
        let Some(r) = self.range(&min, &max) else { return reach };
        self.keys_in(&r)
            .map(|key| self.segment_distance(key, a, b) - radius)
            .fold(reach, f64::min)
    }

    /// Clears every cell whose cube lies within `radius` of the segment.
    pub fn clear_capsule(&mut self, a: &Point3<f64>, b: &Point3<f64>, radius: f64) {
        let min = Point3::new(a.x.min(b.x) - radius, a.y.min(b.y) - radius, a.z.min(b.z) - radius);
        let max = Point3::new(a.x.max(b.x) + radius, a.y.max(b.y) + radius, a.z.max(b.z) + radius);
        let Some(r) = self.range(&min, &max) else { return };
        let doomed: Vec<[i64; 3]> = self.keys_in(&r).filter(|k| self.segment_distance(*k, a, b) <= radius).collect();
        for key in doomed {
            let idx = self.index(key).expect("key in range");
            self.cells[idx] = false;
            self.count -= 1;
            let bi = self.block_index(self.block_of(key));
            self.blocks[bi].retain(|k| *k != key);
        }
    }

    pub fn clear_sphere(&mut self, c: &Point3<f64>, radius: f64) {
        self.clear_capsule(c, c, radius);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldBox {
    pub label: String,
    pub pose: Pose,
    pub half: Vec3,
}

/// Static boxes plus camera occupancy, queried with arm capsules.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionWorld {
    pub boxes: Vec<WorldBox>,
    pub occupancy: VoxelGrid,
    /// Inflation applied to occupied voxels, m.
    pub margin: f64,
}

/// Upper limit reported by clearance queries, m.
pub const CLEARANCE_CAP: f64 = 0.05;

impl CollisionWorld {
    pub fn new(region: &Aabb, config: &PlanningConfig) -> Self {
        CollisionWorld {
            boxes: Vec::new(),
            occupancy: VoxelGrid::new(region, config.voxel_size),
            margin: config.margin,
        }
    }

    pub fn add_box(&mut self, label: &str, pose: Pose, size: [f64; 3]) {
        self.boxes.push(WorldBox {
            label: label.to_string(),
            pose,
            half: Vec3::new(size[0], size[1], size[2]) * 0.5,
        });
    }

    /// Capsules tested against the world. The base capsule (frame 0) rests on the table and
    /// never moves, so it only takes part in self-collision.
    fn world_capsules<'a>(model: &'a ArmModel, caps: &'a [Capsule]) -> impl Iterator<Item = &'a Capsule> {
        model
            .capsules
            .iter()
            .zip(caps)
            .filter(|(spec, _)| spec.frame > 0)
            .map(|(_, c)| c)
    }

    /// Smallest signed gap between the arm at `q` and anything it may not touch, capped at
    /// [`CLEARANCE_CAP`]. Non-positive means collision.
    pub fn clearance(&self, model: &ArmModel, q: &[f64; DOF]) -> f64 {
        let caps = link_capsules(model, q);
        let mut best = CLEARANCE_CAP;
        for &(i, k) in &model.self_pairs {
            let (a, b) = (&caps[i], &caps[k]);
            best = best.min(segment_segment_distance(&a.a, &a.b, &b.a, &b.b) - a.radius - b.radius);
        }
        for c in Self::world_capsules(model, &caps) {
            for bx in &self.boxes {
                best = best.min(segment_obb_distance(&c.a, &c.b, &bx.pose, &bx.half) - c.radius);
            }
            let reach = best.max(0.0);
            best = best.min(self.occupancy.capsule_clearance(&c.a, &c.b, c.radius + self.margin, reach));
            if best <= 0.0 {
                return best;
            }
        }
        best
    }

    pub fn in_collision(&self, model: &ArmModel, q: &[f64; DOF]) -> bool {
        self.clearance(model, q) <= 0.0
    }
}

/// Whether `p` lies inside or within `tol` of a static box.
fn near_box(b: &WorldBox, p: &Point3<f64>, tol: f64) -> bool {
    Shape::Box {
        size: [2.0 * b.half.x, 2.0 * b.half.y, 2.0 * b.half.z],
    }
    .contains(&b.pose, p, tol)
}

/// Static boxes verbatim plus one voxel per valid cloud point. Points explained by a static box
/// (within `config.box_tolerance` of it) are skipped, and voxels touching the arm at `q` are
/// cleared.
pub fn build_world(
    scene: &Scene,
    filtered_cloud: &OrganizedCloud,
    camera: &CameraModel,
    model: &ArmModel,
    q: &[f64; DOF],
    config: &PlanningConfig,
) -> CollisionWorld {
    let mut world = CollisionWorld::new(&scene.workspace, config);
    for b in &scene.static_boxes {
        world.add_box(&b.label, b.pose, b.size);
    }
    for p in &filtered_cloud.points {
        if !p.x.is_finite() {
            continue;
        }
        let w = camera.camera_to_world(p);
        if world.boxes.iter().any(|b| near_box(b, &w, config.box_tolerance)) {
            continue;
        }
        world.occupancy.insert(&w);
    }
    let pad = world.margin + config.self_clear_pad;
    for c in link_capsules(model, q) {
        world.occupancy.clear_capsule(&c.a, &c.b, c.radius + pad);
    }
    world
}

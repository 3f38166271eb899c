//! Laser-spot pipeline: 2D detection on RGB, workspace and robot-body filtering of the organized
//! cloud, pixel-point matching, transform to base_link and temporal smoothing.

mod detect;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

pub use detect::{ChromaDetector, ExternalDetector, SpotDetector};

use crate::geometry::{Aabb, Capsule};
use crate::scene::{CameraFrame, CameraModel, OrganizedCloud};

/// A laser-spot candidate in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelDetection {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
    pub stamp: f64,
}

/// Smoothed laser position in base_link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserEstimate {
    pub point_base: [f64; 3],
    pub pixel: Option<PixelDetection>,
    /// Matched point before smoothing; absent when this frame produced no sample.
    pub raw_point: Option<[f64; 3]>,
    pub valid: bool,
    pub stamp: f64,
}

impl LaserEstimate {
    pub fn invalid(stamp: f64) -> Self {
        LaserEstimate {
            point_base: [0.0; 3],
            pixel: None,
            raw_point: None,
            valid: false,
            stamp,
        }
    }

    pub fn valid_at(p: Point3<f64>, stamp: f64) -> Self {
        LaserEstimate {
            point_base: p.into(),
            pixel: None,
            raw_point: Some(p.into()),
            valid: true,
            stamp,
        }
    }

    pub fn point(&self) -> Option<Point3<f64>> {
        self.valid.then(|| Point3::from(self.point_base))
    }
}

/// Box in base_link plus capsules around the robot body whose points are discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceBounds {
    pub bounds: Aabb,
    pub body: Vec<Capsule>,
    /// Added to every body capsule radius so points rendered on a link surface are caught.
    pub body_margin: f64,
}

pub const DEFAULT_BODY_MARGIN: f64 = 0.005;

impl WorkspaceBounds {
    pub fn new(bounds: Aabb, body: Vec<Capsule>) -> Self {
        WorkspaceBounds {
            bounds,
            body,
            body_margin: DEFAULT_BODY_MARGIN,
        }
    }

    /// Closed-box membership and outside every inflated body capsule (base_link point).
    pub fn keeps(&self, p: &Point3<f64>) -> bool {
        self.bounds.contains(p)
            && !self.body.iter().any(|c| {
                crate::geometry::point_segment_distance(p, &c.a, &c.b) <= c.radius + self.body_margin
            })
    }
}

/// Marks cloud points outside the bounds or on the robot body invalid, keeping the layout.
pub fn filter_workspace(cloud: &OrganizedCloud, camera: &CameraModel, bounds: &WorkspaceBounds) -> OrganizedCloud {
    let mut out = cloud.clone();
    for p in out.points.iter_mut() {
        if p.x.is_finite() && !bounds.keeps(&camera.camera_to_world(p)) {
            *p = OrganizedCloud::INVALID;
        }
    }
    out
}

/// Cloud point at the detection, or the nearest-to-camera valid point of its 3x3 neighbourhood.
pub fn pixel_to_point(cloud: &OrganizedCloud, det: &PixelDetection) -> Option<Point3<f64>> {
    pixel_to_point_where(cloud, det, |_| true)
}

/// As [`pixel_to_point`], treating points rejected by `keep` as invalid. Equivalent to running
/// [`filter_workspace`] first but only touches nine pixels.
pub fn pixel_to_point_where(
    cloud: &OrganizedCloud,
    det: &PixelDetection,
    keep: impl Fn(&Point3<f64>) -> bool,
) -> Option<Point3<f64>> {
    let (w, h) = (cloud.width as i64, cloud.height as i64);
    let u = (det.u.round() as i64).clamp(0, w - 1);
    let v = (det.v.round() as i64).clamp(0, h - 1);
    let at = |u: i64, v: i64| {
        cloud
            .get(u as usize, v as usize)
            .filter(|p| keep(p))
    };
    if let Some(p) = at(u, v) {
        return Some(p);
    }
    let mut best: Option<Point3<f64>> = None;
    for dv in -1..=1 {
        for du in -1..=1 {
            let (uu, vv) = (u + du, v + dv);
            if uu < 0 || vv < 0 || uu >= w || vv >= h {
                continue;
            }
            if let Some(p) = at(uu, vv) {
                if best.map_or(true, |b| p.coords.norm() < b.coords.norm()) {
                    best = Some(p);
                }
            }
        }
    }
    best
}

pub fn to_base(point_camera: &Point3<f64>, camera: &CameraModel) -> Point3<f64> {
    camera.camera_to_world(point_camera)
}

/// Exponential moving average with a miss counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smoother {
    /// Weight of the newest sample.
    pub alpha: f64,
    pub n_miss: u32,
    state: Option<[f64; 3]>,
    misses: u32,
}

impl Smoother {
    pub fn new(alpha: f64, n_miss: u32) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0, "alpha must be in (0, 1]");
        Smoother {
            alpha,
            n_miss,
            state: None,
            misses: 0,
        }
    }

    /// Feeds one tick. Returns the current estimate, `None` once `n_miss` consecutive misses have
    /// accumulated (the next valid sample then restarts the filter exactly at that sample).
    pub fn update(&mut self, sample: Option<Point3<f64>>) -> Option<Point3<f64>> {
        match sample {
            Some(p) => {
                self.misses = 0;
                let next = match self.state {
                    None => p,
                    Some(s) => Point3::from(Point3::from(s).coords * (1.0 - self.alpha) + p.coords * self.alpha),
                };
                self.state = Some(next.into());
            }
            None => {
                self.misses += 1;
                if self.misses >= self.n_miss {
                    self.state = None;
                }
            }
        }
        self.state.map(Point3::from)
    }

    pub fn reset(&mut self) {
        self.state = None;
        self.misses = 0;
    }
}

impl Default for Smoother {
    fn default() -> Self {
        Smoother::new(0.4, 5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Chroma,
    External,
}

/// Detector, matcher and smoother driven once per tick.
pub struct Perception {
    pub detector: Box<dyn SpotDetector + Send>,
    pub smoother: Smoother,
}

impl Perception {
    pub fn new(detector: Box<dyn SpotDetector + Send>, smoother: Smoother) -> Self {
        Perception { detector, smoother }
    }

    /// One frame in, one estimate out.
    pub fn process(&mut self, frame: &CameraFrame, camera: &CameraModel, bounds: &WorkspaceBounds) -> LaserEstimate {
        let det = self.detector.detect(&frame.rgb, frame.stamp);
        let raw = det.and_then(|d| {
            pixel_to_point_where(&frame.cloud, &d, |p| bounds.keeps(&camera.camera_to_world(p)))
                .map(|p| to_base(&p, camera))
        });
        let smoothed = self.smoother.update(raw);
        LaserEstimate {
            point_base: smoothed.map_or([0.0; 3], Into::into),
            pixel: det,
            raw_point: raw.map(Into::into),
            valid: smoothed.is_some(),
            stamp: frame.stamp,
        }
    }
}

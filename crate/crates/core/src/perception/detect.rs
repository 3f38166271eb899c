use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PixelDetection;
use crate::error::{Error, Result};
use crate::scene::RgbImage;

/// Finds at most one laser spot per image.
pub trait SpotDetector {
    fn detect(&mut self, rgb: &RgbImage, stamp: f64) -> Option<PixelDetection>;
}

/// Red-chroma matched filter: `s = R - max(G, B)`, thresholded, split into 8-connected
/// components, and the winning component's `s`-weighted centroid reported.
#[derive(Debug, Clone)]
pub struct ChromaDetector {
    pub threshold: u8,
    mask: Vec<u8>,
    stack: Vec<usize>,
}

impl Default for ChromaDetector {
    fn default() -> Self {
        ChromaDetector::new(80)
    }
}

#[derive(Debug, Clone, Copy)]
struct Component {
    peak: u8,
    size: usize,
    /// Row-major index of the first pixel, i.e. the smallest `(v, u)`.
    first: usize,
    su: f64,
    sv: f64,
    sw: f64,
}

impl Component {
    /// Highest peak, then largest, then smallest `(v, u)`.
    fn beats(&self, other: &Component) -> bool {
        (self.peak, self.size, std::cmp::Reverse(self.first))
            > (other.peak, other.size, std::cmp::Reverse(other.first))
    }
}

fn chroma(px: &[u8]) -> u8 {
    px[0].saturating_sub(px[1].max(px[2]))
}

impl ChromaDetector {
    pub fn new(threshold: u8) -> Self {
        ChromaDetector {
            threshold,
            mask: Vec::new(),
            stack: Vec::new(),
        }
    }
}

impl SpotDetector for ChromaDetector {
    fn detect(&mut self, rgb: &RgbImage, stamp: f64) -> Option<PixelDetection> {
        let (w, h) = (rgb.width, rgb.height);
        let n = w * h;
        // 0 = background, 1 = candidate, 2 = visited.
        self.mask.clear();
        self.mask.extend(rgb.data.chunks_exact(3).map(|px| u8::from(chroma(px) >= self.threshold)));
        let mut best: Option<Component> = None;
        for start in 0..n {
            if self.mask[start] != 1 {
                continue;
            }
            let mut c = Component {
                peak: 0,
                size: 0,
                first: start,
                su: 0.0,
                sv: 0.0,
                sw: 0.0,
            };
            self.mask[start] = 2;
            self.stack.clear();
            self.stack.push(start);
            while let Some(i) = self.stack.pop() {
                let s = chroma(&rgb.data[3 * i..3 * i + 3]);
                let (u, v) = (i % w, i / w);
                c.peak = c.peak.max(s);
                c.size += 1;
                c.su += s as f64 * u as f64;
                c.sv += s as f64 * v as f64;
                c.sw += s as f64;
                for dv in -1i64..=1 {
                    for du in -1i64..=1 {
                        let (uu, vv) = (u as i64 + du, v as i64 + dv);
                        if uu < 0 || vv < 0 || uu >= w as i64 || vv >= h as i64 {
                            continue;
                        }
                        let j = vv as usize * w + uu as usize;
                        if self.mask[j] == 1 {
                            self.mask[j] = 2;
                            self.stack.push(j);
                        }
                    }
                }
            }
            if best.as_ref().map_or(true, |b| c.beats(b)) {
                best = Some(c);
            }
        }
        best.map(|c| PixelDetection {
            u: c.su / c.sw,
            v: c.sv / c.sw,
            confidence: c.peak as f64 / 255.0,
            stamp,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct SidecarRow {
    stamp: f64,
    u: f64,
    v: f64,
    confidence: f64,
}

/// Replays detections from a CSV sidecar with columns `stamp,u,v,confidence`.
#[derive(Debug, Clone)]
pub struct ExternalDetector {
    rows: Vec<PixelDetection>,
    /// Maximum stamp difference for a row to match a frame, s.
    pub tolerance: f64,
}

impl ExternalDetector {
    pub fn from_reader<R: std::io::Read>(reader: R, tolerance: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for (line, rec) in rdr.deserialize::<SidecarRow>().enumerate() {
            let r = rec.map_err(|e| Error::schema(format!("detection sidecar row {}: {e}", line + 1)))?;
            if !(0.0..=1.0).contains(&r.confidence) || r.u < 0.0 || r.v < 0.0 {
                return Err(Error::invalid(format!("detection sidecar row {} out of range", line + 1)));
            }
            rows.push(PixelDetection {
                u: r.u,
                v: r.v,
                confidence: r.confidence,
                stamp: r.stamp,
            });
        }
        rows.sort_by(|a, b| a.stamp.total_cmp(&b.stamp));
        Ok(ExternalDetector { rows, tolerance })
    }

    pub fn load(path: &Path, tolerance: f64) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f, tolerance)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl SpotDetector for ExternalDetector {
    fn detect(&mut self, rgb: &RgbImage, stamp: f64) -> Option<PixelDetection> {
        let i = self.rows.partition_point(|r| r.stamp < stamp);
        let near = [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| self.rows.get(j))
            .filter(|r| (r.stamp - stamp).abs() <= self.tolerance)
            .min_by(|a, b| (a.stamp - stamp).abs().total_cmp(&(b.stamp - stamp).abs()))?;
        (near.u < rgb.width as f64 && near.v < rgb.height as f64).then_some(PixelDetection { stamp, ..*near })
    }
}

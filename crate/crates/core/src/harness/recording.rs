use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::scenario::Scenario;
use super::session::TickRow;
use crate::error::{Error, Result};
use crate::kinematics::ArmFile;
use crate::scene::SceneFile;

pub const RECORDING_SCHEMA_VERSION: u32 = 1;

/// Everything needed to re-run the recording without the original files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub scene: SceneFile,
    pub arm: ArmFile,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub outcome: Outcome,
    pub completed_at: Option<f64>,
    pub rows: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(Header),
    Tick(TickRow),
    Summary(Summary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub header: Header,
    pub rows: Vec<TickRow>,
    pub summary: Summary,
}

fn line<T: Serialize>(out: &mut impl Write, v: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, v)?;
    out.write_all(b"\n")
}

impl Recording {
    pub fn write_jsonl(&self, out: &mut impl Write) -> std::io::Result<()> {
        line(out, &Line::Header(self.header.clone()))?;
        for r in &self.rows {
            line(out, &Line::Tick(r.clone()))?;
        }
        line(out, &Line::Summary(self.summary.clone()))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut rows = Vec::new();
        let mut summary = None;
        for (n, text) in input.lines().enumerate() {
            let text = text.map_err(|e| Error::schema(format!("line {}: {e}", n + 1)))?;
            if text.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&text).map_err(|e| Error::schema(format!("line {}: {e}", n + 1)))?;
            match parsed {
                Line::Header(h) if n == 0 => {
                    if h.schema_version != RECORDING_SCHEMA_VERSION {
                        return Err(Error::schema(format!(
                            "recording version {} unsupported (expected {RECORDING_SCHEMA_VERSION})",
                            h.schema_version
                        )));
                    }
                    header = Some(h);
                }
                Line::Tick(r) if header.is_some() && summary.is_none() => rows.push(r),
                Line::Summary(s) if header.is_some() && summary.is_none() => summary = Some(s),
                _ => return Err(Error::schema(format!("line {}: out of order", n + 1))),
            }
        }
        let header = header.ok_or_else(|| Error::schema("recording has no header"))?;
        let summary = summary.ok_or_else(|| Error::schema("recording has no summary (truncated?)"))?;
        Ok(Recording { header, rows, summary })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(BufReader::new(f)).map_err(|e| Error::schema(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    /// Numeric per-tick table for plotting. The first line is a `#` comment naming the schema.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut out = out;
        writeln!(out, "# laser-teleop table v{RECORDING_SCHEMA_VERSION}").map_err(|e| Error::schema(e.to_string()))?;
        let mut w = csv::Writer::from_writer(out);
        let mut head: Vec<String> = [
            "tick", "t", "laser_on", "hit_x", "hit_y", "hit_z", "est_valid", "est_x", "est_y", "est_z", "region",
            "mode", "dwell_progress", "active_button", "command",
        ]
        .map(String::from)
        .to_vec();
        head.extend((0..6).map(|i| format!("q{i}")));
        head.extend(
            ["gripper", "effort", "tcp_x", "tcp_y", "tcp_z", "tcp_qx", "tcp_qy", "tcp_qz", "tcp_qw"].map(String::from),
        );
        head.extend(["head_qx", "head_qy", "head_qz", "head_qw", "attached", "events"].map(String::from));
        let err = |e: csv::Error| Error::schema(e.to_string());
        w.write_record(&head).map_err(err)?;
        let num = |x: f64| x.to_string();
        for r in &self.rows {
            let hit = r.laser_hit.map_or([String::new(), String::new(), String::new()], |h| h.map(num));
            let mut rec = vec![
                r.tick.to_string(),
                num(r.t),
                (r.input.laser.on as u8).to_string(),
            ];
            rec.extend(hit);
            rec.push((r.estimate.valid as u8).to_string());
            rec.extend(r.estimate.point_base.map(num));
            rec.push(r.region.to_string());
            rec.push(r.mode.clone());
            rec.push(num(r.dwell_progress));
            rec.push(r.active_button.clone().unwrap_or_default());
            rec.push(r.command.as_ref().map_or("", |c| c.name()).to_string());
            rec.extend(r.q.map(num));
            rec.push(num(r.gripper));
            rec.push(num(r.effort));
            rec.extend(r.tcp.position.map(num));
            rec.extend(r.tcp.orientation.map(num));
            rec.extend(r.input.head.map(num));
            rec.push(r.attached.clone().unwrap_or_default());
            let names: Vec<String> = r
                .events
                .iter()
                .map(|e| {
                    serde_json::to_value(e)
                        .ok()
                        .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(str::to_string))
                        .unwrap_or_default()
                })
                .collect();
            rec.push(names.join(";"));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| Error::schema(e.to_string()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(BufWriter::new(f))
    }
}

//! SVG plots of a recording: laser estimate against tcp position, and dwell/mode over time.

use std::path::{Path, PathBuf};

use laser_teleop::harness::Recording;
use plotters::prelude::*;

type PlotResult<T> = Result<T, Box<dyn std::error::Error>>;

const SIZE: (u32, u32) = (900, 700);
const AXES: [&str; 3] = ["x", "y", "z"];

fn range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = ((hi - lo) * 0.05).max(0.01);
    lo - pad..hi + pad
}

/// One panel per axis: valid laser estimates as points, tcp position as a line.
fn positions(rec: &Recording, path: &Path) -> PlotResult<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let t_end = rec.rows.last().map_or(1.0, |r| r.t).max(1e-3);
    for (axis, area) in root.split_evenly((3, 1)).iter().enumerate() {
        let est: Vec<(f64, f64)> = rec
            .rows
            .iter()
            .filter(|r| r.estimate.valid)
            .map(|r| (r.t, r.estimate.point_base[axis]))
            .collect();
        let tcp: Vec<(f64, f64)> = rec.rows.iter().map(|r| (r.t, r.tcp.position[axis])).collect();
        let y = range(est.iter().chain(&tcp).map(|p| p.1));
        let mut chart = ChartBuilder::on(area)
            .margin(8)
            .x_label_area_size(24)
            .y_label_area_size(50)
            .build_cartesian_2d(0.0..t_end, y)?;
        chart
            .configure_mesh()
            .x_desc("t [s]")
            .y_desc(format!("{} [m]", AXES[axis]))
            .draw()?;
        chart
            .draw_series(est.iter().map(|&p| Circle::new(p, 2, RED.filled())))?
            .label("laser estimate")
            .legend(|(x, y)| Circle::new((x, y), 3, RED.filled()));
        chart
            .draw_series(LineSeries::new(tcp, &BLUE))?
            .label("tcp")
            .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], BLUE));
        if axis == 0 {
            chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
        }
    }
    root.present()?;
    Ok(())
}

/// Dwell progress, gripper opening and a step trace of the controller mode.
fn modes(rec: &Recording, path: &Path) -> PlotResult<()> {
    let mut names: Vec<String> = Vec::new();
    for r in &rec.rows {
        let base = r.mode.split(':').next().unwrap_or("").to_string();
        if !names.contains(&base) {
            names.push(base);
        }
    }
    let level = |m: &str| names.iter().position(|n| m.starts_with(n.as_str())).unwrap_or(0) as f64;
    let t_end = rec.rows.last().map_or(1.0, |r| r.t).max(1e-3);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let (top, bottom) = root.split_vertically(SIZE.1 / 2);

    let mut chart = ChartBuilder::on(&top)
        .margin(8)
        .x_label_area_size(24)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..t_end, 0.0..1.05)?;
    chart.configure_mesh().x_desc("t [s]").draw()?;
    chart
        .draw_series(LineSeries::new(rec.rows.iter().map(|r| (r.t, r.dwell_progress)), &RED))?
        .label("dwell progress")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], RED));
    chart
        .draw_series(LineSeries::new(rec.rows.iter().map(|r| (r.t, r.gripper)), &GREEN))?
        .label("gripper opening")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], GREEN));
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;

    let top_level = names.len().max(1) as f64 - 0.5;
    let mut chart = ChartBuilder::on(&bottom)
        .margin(8)
        .x_label_area_size(24)
        .y_label_area_size(140)
        .build_cartesian_2d(0.0..t_end, -0.5..top_level)?;
    let label = names.clone();
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .y_labels(names.len().max(1))
        .y_label_formatter(&move |v: &f64| {
            let i = v.round();
            if (v - i).abs() < 1e-6 && i >= 0.0 {
                label.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .draw()?;
    chart.draw_series(LineSeries::new(rec.rows.iter().map(|r| (r.t, level(&r.mode))), &BLACK))?;
    root.present()?;
    Ok(())
}

/// Writes `<stem>-position.svg` and `<stem>-mode.svg` into `dir`.
pub fn write_all(rec: &Recording, dir: &Path, stem: &str) -> PlotResult<Vec<PathBuf>> {
    if rec.rows.is_empty() {
        return Err("recording has no rows to plot".into());
    }
    let pos = dir.join(format!("{stem}-position.svg"));
    positions(rec, &pos)?;
    let mode = dir.join(format!("{stem}-mode.svg"));
    modes(rec, &mode)?;
    Ok(vec![pos, mode])
}

//! Python bindings: run scenarios, inspect and replay recordings, and call the arm kinematics.
//!
//! Structured results cross the boundary as JSON and come out as plain dicts and lists.

use std::path::PathBuf;

use laser_teleop::geometry::Pose;
use laser_teleop::harness::{metrics, replay, run, Recording, Scenario};
use laser_teleop::kinematics::{fk, ik, ArmModel, IkParams, DOF};
use nalgebra::{Quaternion, Translation3, UnitQuaternion};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn joints(q: Vec<f64>) -> PyResult<[f64; DOF]> {
    q.try_into().map_err(|q: Vec<f64>| PyValueError::new_err(format!("expected {DOF} joint values, got {}", q.len())))
}

/// Runs a scripted scenario file and returns its recording.
#[pyfunction]
#[pyo3(signature = (path, seed=None))]
fn run_scenario(path: PathBuf, seed: Option<u64>) -> PyResult<PyRecording> {
    let mut s = Scenario::load(&path).map_err(err)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(PyRecording(run(&s).map_err(err)?))
}

/// Tool pose `(position, quaternion_xyzw)` of the default arm at joint angles `q`.
#[pyfunction]
fn forward_kinematics(q: Vec<f64>) -> PyResult<([f64; 3], [f64; 4])> {
    let pose = fk(&ArmModel::default_arm(), &joints(q)?);
    let r = pose.rotation;
    Ok((pose.translation.vector.into(), [r.i, r.j, r.k, r.w]))
}

/// Joint angles reaching the given tool pose, or None if the solver does not converge.
/// Seeds from mid-range unless `seed` is given.
#[pyfunction]
#[pyo3(signature = (position, quaternion, seed=None))]
fn inverse_kinematics(position: [f64; 3], quaternion: [f64; 4], seed: Option<Vec<f64>>) -> PyResult<Option<Vec<f64>>> {
    let model = ArmModel::default_arm();
    let seed = match seed {
        Some(q) => joints(q)?,
        None => model.mid_range(),
    };
    let [x, y, z, w] = quaternion;
    let target = Pose::from_parts(
        Translation3::new(position[0], position[1], position[2]),
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
    );
    Ok(ik(&model, &target, &seed, &IkParams::default()).ok().map(|s| s.q.to_vec()))
}

/// Total rotation along a stream of `[x, y, z, w]` head quaternions, rad.
#[pyfunction]
fn mov_rad(quaternions: Vec<[f64; 4]>) -> f64 {
    let stream: Vec<_> = quaternions
        .iter()
        .map(|&[x, y, z, w]| UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
        .collect();
    metrics::mov_rad(&stream)
}

#[pyclass(name = "Recording", module = "laser_teleop")]
struct PyRecording(Recording);

#[pymethods]
impl PyRecording {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyRecording(Recording::load(&path).map_err(err)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(err)
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_csv(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.rows.len()
    }

    #[getter]
    fn completed(&self) -> bool {
        self.0.summary.metrics.complete
    }

    /// Outcome, completion time and metrics.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.summary)
    }

    /// One row as a dict.
    fn row<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyAny>> {
        let row = self
            .0
            .rows
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("row {index} out of range")))?;
        to_py(py, row)
    }

    /// Per-row series of one numeric field, e.g. `"t"`, `"dwell_progress"`, `"gripper"`.
    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        self.0
            .rows
            .iter()
            .map(|r| match name {
                "t" => Ok(r.t),
                "dwell_progress" => Ok(r.dwell_progress),
                "gripper" => Ok(r.gripper),
                "effort" => Ok(r.effort),
                "tcp_x" | "tcp_y" | "tcp_z" => Ok(r.tcp.position[axis(name)]),
                "est_x" | "est_y" | "est_z" => Ok(r.estimate.point_base[axis(name)]),
                _ => Err(PyValueError::new_err(format!("unknown column {name}"))),
            })
            .collect()
    }

    /// Re-simulates the recording; true when every tick and the metrics match.
    fn replay(&self) -> PyResult<bool> {
        Ok(replay(&self.0).map_err(err)?.identical())
    }

    fn to_jsonl(&self) -> String {
        self.0.to_jsonl()
    }

    fn __repr__(&self) -> String {
        format!(
            "Recording(scenario={:?}, rows={}, outcome={:?})",
            self.0.header.scenario.name,
            self.0.rows.len(),
            self.0.summary.outcome
        )
    }
}

fn axis(name: &str) -> usize {
    match name.as_bytes().last() {
        Some(b'x') => 0,
        Some(b'y') => 1,
        _ => 2,
    }
}

#[pymodule]
#[pyo3(name = "laser_teleop")]
fn laser_teleop_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRecording>()?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(forward_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_kinematics, m)?)?;
    m.add_function(wrap_pyfunction!(mov_rad, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_vectors_must_have_six_entries() {
        assert_eq!(joints(vec![0.0; 6]).unwrap(), [0.0; 6]);
        assert!(joints(vec![0.0; 5]).is_err());
    }

    #[test]
    fn column_axes() {
        assert_eq!(["tcp_x", "est_y", "tcp_z"].map(axis), [0, 1, 2]);
    }

    #[test]
    fn kinematics_wrappers_round_trip() {
        let q = vec![0.2, 0.3, -0.4, 0.1, 0.3, 0.2];
        let (p, r) = forward_kinematics(q.clone()).unwrap();
        let sol = inverse_kinematics(p, r, Some(vec![0.0; 6])).unwrap().unwrap();
        let (p2, _) = forward_kinematics(sol).unwrap();
        assert!((0..3).all(|i| (p[i] - p2[i]).abs() < 1e-4));
        assert_eq!(mov_rad(vec![[0.0, 0.0, 0.0, 1.0]; 3]), 0.0);
    }
}

//! Python bindings. Structured inputs (model, actuators, controller) travel
//! as JSON in the same schema as the run configuration file.

use std::path::PathBuf;

use ::auvpilot as core;
use core::actuators::{ActuatorBank, Allocator};
use core::autopilot;
use core::controller::ControllerConfig;
use core::dynamics::{DofMask, ModelParams, VehicleModel};
use core::kinematics::CurrentVelocity;
use core::guidance::WaypointPlan;
use core::identification::{self, IdentStage, OptimizerConfig, ParameterBound, StageKind};
use core::regression;
use core::simulator::{self, Channel, CommandSchedule, SimConfig, TrajectoryLog};
use nalgebra::{Vector3, Vector6};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::NonFinite { .. } | core::Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn from_json<T: DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn by_name<T: DeserializeOwned>(name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_owned()))
        .map_err(|_| PyValueError::new_err(format!("unknown name `{name}`")))
}

/// Vehicle geometry, mass properties and hydrodynamic coefficients.
#[pyclass(name = "ModelParams", from_py_object)]
#[derive(Clone)]
struct PyModel(ModelParams);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let p: ModelParams = from_json(text)?;
        p.validate().map_err(err)?;
        Ok(Self(p))
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.0)
    }

    fn coefficient(&self, name: &str) -> PyResult<f64> {
        Ok(self.0.coefficients.get(by_name(name)?))
    }

    fn set_coefficient(&mut self, name: &str, value: f64) -> PyResult<()> {
        self.0.coefficients.set(by_name(name)?, value);
        Ok(())
    }

    /// Body-frame acceleration for state `eta, nu` under wrench `tau`.
    fn acceleration(&self, eta: [f64; 6], nu: [f64; 6], tau: [f64; 6]) -> PyResult<[f64; 6]> {
        let model = VehicleModel::new(self.0).map_err(err)?;
        let state = core::kinematics::VehicleState {
            eta: Vector6::from(eta),
            nu: Vector6::from(nu),
        };
        let a = model.acceleration(&state, &CurrentVelocity::default(), &Vector6::from(tau), &DofMask::ALL);
        Ok(a.into())
    }
}

/// The six thrusters: motors, propeller curves and mounting.
#[pyclass(name = "ActuatorBank", from_py_object)]
#[derive(Clone)]
struct PyBank(ActuatorBank);

#[pymethods]
impl PyBank {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let b: ActuatorBank = from_json(text)?;
        b.validate().map_err(err)?;
        Ok(Self(b))
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.0)
    }

    /// Body wrench produced by actual speeds `n_a` (rpm).
    fn wrench(&self, n_a: [f64; 6], u_r: f64, w_r: f64) -> [f64; 6] {
        self.0.tau(&n_a, u_r, w_r).into()
    }

    /// Actuator forces realising `tau`; fails outside the attainable subspace.
    fn allocate(&self, tau: [f64; 6]) -> PyResult<[f64; 6]> {
        Allocator::new(&self.0.geometry)
            .and_then(|a| a.allocate(&Vector6::from(tau)))
            .map_err(err)
    }
}

/// Sampled trajectory: time, commands, actual speeds and state.
#[pyclass(name = "TrajectoryLog", from_py_object)]
#[derive(Clone)]
struct PyLog(TrajectoryLog);

#[pymethods]
impl PyLog {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        TrajectoryLog::load(&path).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn times(&self) -> Vec<f64> {
        self.0.rows.iter().map(|r| r.t).collect()
    }

    /// One column by name: `x, y, z, phi, theta, psi, u, v, w, p, q, r`.
    fn channel(&self, name: &str) -> PyResult<Vec<f64>> {
        Ok(self.0.channel(by_name::<Channel>(name)?))
    }

    fn commands(&self) -> Vec<[f64; 6]> {
        self.0.rows.iter().map(|r| r.commands).collect()
    }

    fn actual(&self) -> Vec<[f64; 6]> {
        self.0.rows.iter().map(|r| r.actual).collect()
    }
}

/// Open-loop run of a piecewise-constant command table `[(t, [n1..n6])]`.
#[pyfunction]
#[pyo3(signature = (model, bank, commands, duration_s, dt_s = 0.01))]
fn simulate(model: &PyModel, bank: &PyBank, commands: Vec<(f64, [f64; 6])>, duration_s: f64, dt_s: f64) -> PyResult<PyLog> {
    let mut schedule = CommandSchedule::new(commands).map_err(err)?;
    let vm = VehicleModel::new(model.0).map_err(err)?;
    simulator::run(&vm, &bank.0, &SimConfig::new(dt_s, duration_s), &mut schedule)
        .map(PyLog)
        .map_err(err)
}

/// Closed-loop waypoint mission. Returns the log and the time the last
/// waypoint was accepted, if it was.
#[pyfunction]
#[pyo3(signature = (model, bank, controller_json, waypoints, acceptance_radius_m, duration_s, dt_s = 0.01))]
fn run_mission(
    model: &PyModel,
    bank: &PyBank,
    controller_json: &str,
    waypoints: Vec<([f64; 3], f64)>,
    acceptance_radius_m: f64,
    duration_s: f64,
    dt_s: f64,
) -> PyResult<(PyLog, Option<f64>)> {
    let controller: ControllerConfig = from_json(controller_json)?;
    let plan = WaypointPlan::new(
        waypoints.into_iter().map(|(p, u)| (Vector3::from(p), u)).collect(),
        acceptance_radius_m,
    )
    .map_err(err)?;
    let sim = SimConfig::new(dt_s, duration_s);
    let (log, records) = autopilot::run_mission(&model.0, &bank.0, &sim, &plan, &controller).map_err(err)?;
    let done = records.iter().find(|r| r.complete).map(|r| r.t);
    Ok((PyLog(log), done))
}

/// Quadratic least-squares fit `F = a0 + a1 n + a2 n^2`; returns `(a, B)`.
#[pyfunction]
#[pyo3(signature = (n, force, through_origin = false))]
fn fit_quadratic(n: Vec<f64>, force: Vec<f64>, through_origin: bool) -> PyResult<([f64; 3], Option<f64>)> {
    if n.len() != force.len() {
        return Err(PyValueError::new_err("n and force differ in length"));
    }
    let a = regression::fit_polynomial(&n, &force, through_origin).map_err(err)?;
    let y_hat: Vec<f64> = n.iter().map(|x| a[0] + a[1] * x + a[2] * x * x).collect();
    Ok((a, regression::determination(&y_hat, &force).ok()))
}

/// Reference log of one identification stage, generated with `model`.
#[pyfunction]
#[pyo3(signature = (stage, model, bank, dt_s = 0.05))]
fn synthetic_reference(stage: &str, model: &PyModel, bank: &PyBank, dt_s: f64) -> PyResult<PyLog> {
    identification::synthetic_reference(by_name::<StageKind>(stage)?, &model.0, &bank.0, dt_s)
        .map(PyLog)
        .map_err(err)
}

/// Runs one identification stage over `bounds = [(coefficient, low, high)]`.
/// Returns the updated model with the initial and final quality.
#[pyfunction]
#[pyo3(signature = (stage, reference, model, bank, bounds, seed = 0))]
fn identify_stage(
    stage: &str,
    reference: &PyLog,
    model: &PyModel,
    bank: &PyBank,
    bounds: Vec<(String, f64, f64)>,
    seed: u64,
) -> PyResult<(PyModel, f64, f64)> {
    let parameters = bounds
        .iter()
        .map(|(name, low, high)| {
            Ok(ParameterBound {
                coefficient: by_name(name)?,
                low: *low,
                high: *high,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let stage = IdentStage::new(by_name(stage)?, parameters);
    let opt = OptimizerConfig {
        seed,
        ..OptimizerConfig::default()
    };
    let (p, report) = identification::run_stage(&stage, &reference.0, &model.0, &bank.0, &opt).map_err(err)?;
    Ok((PyModel(p), report.initial_q, report.final_q))
}

/// `(theta_d, psi_d)` towards `waypoint`.
#[pyfunction]
fn los_angles(position: [f64; 3], waypoint: [f64; 3]) -> PyResult<(f64, f64)> {
    core::guidance::los_angles(&Vector3::from(position), &Vector3::from(waypoint)).map_err(err)
}

#[pymodule]
#[pyo3(name = "auvpilot")]
fn auvpilot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyBank>()?;
    m.add_class::<PyLog>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_mission, m)?)?;
    m.add_function(wrap_pyfunction!(fit_quadratic, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_reference, m)?)?;
    m.add_function(wrap_pyfunction!(identify_stage, m)?)?;
    m.add_function(wrap_pyfunction!(los_angles, m)?)?;
    Ok(())
}

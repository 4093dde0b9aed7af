//! Python bindings for `epictrl_core`.

use std::path::PathBuf;

use epictrl_core::cli::output::RunSummary;
use epictrl_core::control::{fbsm_solve, optimize_terminal_time};
use epictrl_core::model::compartment_name;
use epictrl_core::{ControlSignal, StateVector, Trajectory};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(epictrl, EpictrlError, PyException);

fn err(e: epictrl_core::Error) -> PyErr {
    EpictrlError::new_err(e.to_string())
}

/// A validated run configuration.
#[pyclass(name = "RunConfig", module = "epictrl", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: epictrl_core::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    /// Default 35-day run for `covid19`, `ebola` or `influenza`.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let inner = epictrl_core::RunConfig::preset(name).map_err(err)?;
        Ok(PyRunConfig { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = epictrl_core::RunConfig::from_json(text).map_err(err)?;
        Ok(PyRunConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = epictrl_core::load_config(path).map_err(err)?;
        Ok(PyRunConfig { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        epictrl_core::save_config(&self.inner, path).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Copy with impulses every 7 days at 5% arrivals.
    fn with_default_impulses(&self) -> Self {
        PyRunConfig {
            inner: self.inner.clone().with_default_impulses(),
        }
    }

    /// Copy with a different horizon.
    fn with_tau(&self, tau: f64) -> Self {
        let mut inner = self.inner.clone();
        inner.grid.tau = tau;
        if let Some(s) = inner.schedule.take() {
            inner.schedule = Some(s.truncated(tau));
        }
        PyRunConfig { inner }
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.grid.tau
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.grid.h
    }

    #[getter]
    fn doses(&self) -> usize {
        self.inner.params.doses()
    }

    /// Initial state in `S, E, A, I, R, D, V1..Vn` order.
    #[getter]
    fn initial(&self) -> Vec<f64> {
        self.inner.initial.as_slice().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(tau={}, h={}, doses={}, impulses={})",
            self.inner.grid.tau,
            self.inner.grid.h,
            self.inner.params.doses(),
            self.inner.impulses().map_or(0, |s| s.events.len())
        )
    }
}

/// Result of `optimize`.
#[pyclass(name = "Solution", module = "epictrl", frozen)]
struct PySolution {
    #[pyo3(get)]
    cost: f64,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    tau: f64,
    #[pyo3(get)]
    transversality_residual: Option<f64>,
    #[pyo3(get)]
    cost_history: Vec<f64>,
    solution: epictrl_core::OptimalSolution,
}

#[pymethods]
impl PySolution {
    /// `{"t", "u", "v"}` node samples.
    fn controls<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        controls_dict(py, &self.solution.controls)
    }

    /// Column dict of the optimal state trajectory.
    fn trajectory<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        trajectory_dict(py, &self.solution.state_traj)
    }

    /// Column dict `t, p1..p6, q1..qn` of the adjoint trajectory.
    fn adjoints<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let adj = &self.solution.adjoint_traj;
        let d = PyDict::new(py);
        d.set_item("t", adj.times.clone())?;
        let flat: Vec<Vec<f64>> = adj.adjoints.iter().map(|a| a.to_flat()).collect();
        let width = flat.first().map_or(0, Vec::len);
        for k in 0..width {
            let name = if k < 6 {
                format!("p{}", k + 1)
            } else {
                format!("q{}", k - 5)
            };
            d.set_item(name, flat.iter().map(|row| row[k]).collect::<Vec<_>>())?;
        }
        Ok(d)
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        summary_dict(py, &RunSummary::from_solution(&self.solution))
    }

    fn __repr__(&self) -> String {
        format!(
            "Solution(cost={}, iterations={}, converged={}, tau={})",
            self.cost, self.iterations, self.converged, self.tau
        )
    }
}

fn controls_dict<'py>(py: Python<'py>, c: &ControlSignal) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", c.grid().to_vec())?;
    d.set_item("u", c.u().to_vec())?;
    d.set_item("v", c.v().to_vec())?;
    Ok(d)
}

fn trajectory_dict<'py>(py: Python<'py>, traj: &Trajectory) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", traj.times().to_vec())?;
    for c in 0..traj.initial().len() {
        d.set_item(compartment_name(c), traj.series(c))?;
    }
    Ok(d)
}

fn summary_dict<'py>(py: Python<'py>, s: &RunSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("tau", s.tau)?;
    d.set_item("final_n", s.final_n)?;
    d.set_item("final_d", s.final_d)?;
    d.set_item("peak_i", s.peak_i)?;
    d.set_item("peak_a", s.peak_a)?;
    d.set_item("day_s_below_1pct", s.day_s_below_1pct)?;
    d.set_item("day_e_below_1pct", s.day_e_below_1pct)?;
    d.set_item("day_i_below_1pct", s.day_i_below_1pct)?;
    d.set_item("final_vn", s.final_vn)?;
    d.set_item("final_r", s.final_r)?;
    d.set_item("cost", s.cost)?;
    d.set_item("iterations", s.iterations)?;
    d.set_item("converged", s.converged)?;
    d.set_item("transversality_residual", s.transversality_residual)?;
    Ok(d)
}

/// Integrates `config` under fixed controls: `"none"`, `"max"`, or a
/// `(u, v)` pair of per-node sample lists.
#[pyfunction]
#[pyo3(signature = (config, controls = None))]
fn simulate<'py>(
    py: Python<'py>,
    config: &PyRunConfig,
    controls: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = &config.inner;
    let params = cfg.model_params();
    let grid = cfg.time_grid().map_err(err)?;
    let signal = match controls {
        None => ControlSignal::zeros(grid.nodes()),
        Some(obj) => match obj.extract::<String>() {
            Ok(mode) if mode == "none" => ControlSignal::zeros(grid.nodes()),
            Ok(mode) if mode == "max" => ControlSignal::constant(grid.nodes(), params.v_max(), 1.0),
            Ok(mode) => return Err(EpictrlError::new_err(format!("unknown control mode {mode:?}"))),
            Err(_) => {
                let (u, v): (Vec<f64>, Vec<f64>) = obj.extract()?;
                ControlSignal::new(grid.nodes(), v, u)
            }
        },
    }
    .map_err(err)?;
    let traj = py
        .detach(|| epictrl_core::integrate_forward(&cfg.initial, &signal, &params, &grid, cfg.impulses()))
        .map_err(err)?;
    let cost = epictrl_core::total_cost(&traj, &signal, &cfg.weights, &params).map_err(err)?;
    let d = trajectory_dict(py, &traj)?;
    let (v, u): (Vec<f64>, Vec<f64>) = traj.times().iter().map(|&t| signal.at(t)).unzip();
    d.set_item("u", u)?;
    d.set_item("v", v)?;
    d.set_item("cost", cost)?;
    Ok(d)
}

/// Solves for optimal controls; `free_tau=(min, max)` also optimizes the horizon.
#[pyfunction]
#[pyo3(signature = (config, free_tau = None))]
fn optimize(py: Python<'_>, config: &PyRunConfig, free_tau: Option<(f64, f64)>) -> PyResult<PySolution> {
    let cfg = &config.inner;
    let params = cfg.model_params();
    let options = cfg.sweep_options();
    let solution = py
        .detach(|| match free_tau {
            None => fbsm_solve(
                &cfg.initial,
                &params,
                &cfg.weights,
                &cfg.time_grid()?,
                cfg.impulses(),
                &options,
            ),
            Some(range) => optimize_terminal_time(
                &cfg.initial,
                &params,
                &cfg.weights,
                cfg.impulses(),
                range,
                cfg.grid.h,
                &options,
            )
            .map(|(_, s)| s),
        })
        .map_err(err)?;
    Ok(PySolution {
        cost: solution.cost,
        iterations: solution.iterations,
        converged: solution.converged,
        tau: solution.grid.tau(),
        transversality_residual: solution.transversality_residual,
        cost_history: solution.cost_history.clone(),
        solution,
    })
}

/// Basic reproduction number with `N0` the initial total population.
#[pyfunction]
fn r0(config: &PyRunConfig) -> PyResult<f64> {
    let cfg = &config.inner;
    epictrl_core::basic_reproduction_number(&cfg.params, cfg.initial.total_population()).map_err(err)
}

/// Right-hand side at `state` (`S, E, A, I, R, D, V1..Vn`) for the config's parameters.
#[pyfunction]
fn vector_field(state: Vec<f64>, v: f64, u: f64, config: &PyRunConfig) -> PyResult<Vec<f64>> {
    let x = StateVector::from_values(state).map_err(err)?;
    let dx = epictrl_core::vector_field(&x, v, u, &config.inner.model_params()).map_err(err)?;
    Ok(dx.as_slice().to_vec())
}

#[pymodule]
fn epictrl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EpictrlError", m.py().get_type::<EpictrlError>())?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(r0, m)?)?;
    m.add_function(wrap_pyfunction!(vector_field, m)?)?;
    Ok(())
}

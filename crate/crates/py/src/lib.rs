//! Python bindings: model parameters, simulation, regenerations, the renewal
//! solver, coupled runs, goodness-of-fit and the verification targets.
//!
//! Tabular results come back as dicts of equal-length columns.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fitbd::coupling::coupled_simulate;
use fitbd::engine::{observation_grid, simulate_replica};
use fitbd::regen::regenerations_for_replica;
use fitbd::renewal::{limit_value, solve_renewal, GridFunction, RenewalProblem};
use fitbd::replicate::try_run_replicas;
use fitbd::stats::{chi_square_gof, ks_statistic, logseries_pmf as pmf, GoFReport, ReferenceLaw};
use fitbd::verify::{run_target, Target};

const DEFAULT_SEED: u64 = 20240601;

fn to_py(e: fitbd::Error) -> PyErr {
    if e.is_usage() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Birth rate `lam` per type and random-killing probability `r`.
#[pyclass(frozen, from_py_object)]
#[derive(Clone, Copy)]
struct ModelParams {
    inner: fitbd::ModelParams,
}

#[pymethods]
impl ModelParams {
    #[new]
    fn new(lam: f64, r: f64) -> PyResult<Self> {
        Ok(Self { inner: fitbd::ModelParams::new(lam, r).map_err(to_py)? })
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda()
    }

    #[getter]
    fn r(&self) -> f64 {
        self.inner.r()
    }

    fn __repr__(&self) -> String {
        format!("ModelParams(lam={}, r={})", self.inner.lambda(), self.inner.r())
    }
}

/// Observations on the grid 0, obs_dt, .. t_max for each replica, as columns
/// replica, t, X, phi, age, births.
#[pyfunction]
#[pyo3(signature = (params, t_max, obs_dt=1.0, replicas=1, seed=DEFAULT_SEED, workers=1))]
fn simulate<'py>(
    py: Python<'py>,
    params: ModelParams,
    t_max: f64,
    obs_dt: f64,
    replicas: u64,
    seed: u64,
    workers: usize,
) -> PyResult<Bound<'py, PyDict>> {
    if !(obs_dt > 0.0) {
        return Err(PyValueError::new_err("obs_dt must be positive"));
    }
    let grid = observation_grid(t_max, obs_dt);
    let runs = py
        .detach(|| {
            try_run_replicas(replicas, workers, |i| Ok(simulate_replica(params.inner, t_max, &grid, seed, i)?.observations))
        })
        .map_err(to_py)?;
    let rows: Vec<(u64, &fitbd::Observation)> =
        runs.iter().enumerate().flat_map(|(i, obs)| obs.iter().map(move |o| (i as u64, o))).collect();
    let d = PyDict::new(py);
    d.set_item("replica", rows.iter().map(|r| r.0).collect::<Vec<_>>())?;
    d.set_item("t", rows.iter().map(|r| r.1.time).collect::<Vec<_>>())?;
    d.set_item("X", rows.iter().map(|r| r.1.x).collect::<Vec<_>>())?;
    d.set_item("phi", rows.iter().map(|r| r.1.phi).collect::<Vec<_>>())?;
    d.set_item("age", rows.iter().map(|r| r.1.age).collect::<Vec<_>>())?;
    d.set_item("births", rows.iter().map(|r| r.1.births).collect::<Vec<_>>())?;
    Ok(d)
}

/// Regeneration times of one trajectory, as columns n, R_n, phi, age.
#[pyfunction]
#[pyo3(signature = (params, t_max, seed=DEFAULT_SEED, replica=0))]
fn regenerations<'py>(py: Python<'py>, params: ModelParams, t_max: f64, seed: u64, replica: u64) -> PyResult<Bound<'py, PyDict>> {
    let (_, regens) = py.detach(|| regenerations_for_replica(params.inner, t_max, seed, replica)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("n", regens.iter().map(|r| r.n).collect::<Vec<_>>())?;
    d.set_item("R_n", regens.iter().map(|r| r.time).collect::<Vec<_>>())?;
    d.set_item("phi", regens.iter().map(|r| r.phi_at_r).collect::<Vec<_>>())?;
    d.set_item("age", regens.iter().map(|r| r.age_at_r).collect::<Vec<_>>())?;
    Ok(d)
}

/// Solves H = h + H * F on a grid of step `dt`; returns (limit, H).
#[pyfunction]
fn solve_renewal_grid(f: Vec<f64>, h: Vec<f64>, dt: f64, mu: f64) -> PyResult<(f64, Vec<f64>)> {
    let problem = RenewalProblem::new(
        GridFunction::new(dt, f).map_err(to_py)?,
        GridFunction::new(dt, h).map_err(to_py)?,
        mu,
    )
    .map_err(to_py)?;
    let big_h = solve_renewal(&problem).map_err(to_py)?;
    Ok((limit_value(&problem.h, mu).map_err(to_py)?, big_h.values))
}

/// Coupled runs of the r-process against the all-random process.
#[pyfunction]
#[pyo3(signature = (params, t_max, replicas=100, seed=DEFAULT_SEED, population_cap=1000))]
fn couple<'py>(
    py: Python<'py>,
    params: ModelParams,
    t_max: f64,
    replicas: u64,
    seed: u64,
    population_cap: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let runs = py.detach(|| {
        (0..replicas).map(|i| coupled_simulate(params.inner, t_max, seed, i, Some(population_cap), false)).collect::<Vec<_>>()
    });
    let mut violations = 0u64;
    let mut gap = f64::INFINITY;
    let (mut max_f1, mut max_fr) = (Vec::new(), Vec::new());
    for r in runs {
        match r {
            Ok(run) => {
                gap = gap.min(run.min_gap);
                max_f1.push(run.max_f1);
                max_fr.push(run.max_fr);
            }
            Err(fitbd::Error::OrderViolation(_)) => violations += 1,
            Err(e) => return Err(to_py(e)),
        }
    }
    let d = PyDict::new(py);
    d.set_item("violations", violations)?;
    d.set_item("dominance_gap_min", gap)?;
    d.set_item("replicas", replicas)?;
    d.set_item("t_max", t_max)?;
    d.set_item("max_f1", max_f1)?;
    d.set_item("max_fr", max_fr)?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &GoFReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("family", &r.family)?;
    d.set_item("statistic", r.statistic)?;
    d.set_item("threshold", r.threshold)?;
    d.set_item("n", r.n)?;
    d.set_item("pass", r.pass)?;
    Ok(d)
}

/// 5% test of `samples` against a law named `uniform`, `exp:RATE`,
/// `power:K` or `logseries:LAMBDA` (chi-square for the last, KS otherwise).
#[pyfunction]
fn gof<'py>(py: Python<'py>, samples: Vec<f64>, law: &str) -> PyResult<Bound<'py, PyDict>> {
    let law: ReferenceLaw = law.parse().map_err(to_py)?;
    let report = match law {
        ReferenceLaw::LogSeries { lambda } => {
            let mut counts: Vec<u64> = Vec::new();
            for &x in &samples {
                if !(x >= 1.0 && x.fract() == 0.0) {
                    return Err(PyValueError::new_err(format!("log-series samples must be positive integers, got {x}")));
                }
                let k = x as usize - 1;
                if counts.len() <= k {
                    counts.resize(k + 1, 0);
                }
                counts[k] += 1;
            }
            chi_square_gof(&counts, 1, |n| pmf(lambda, n).unwrap_or(0.0), &law.to_string())
        }
        _ => ks_statistic(&samples, law),
    }
    .map_err(to_py)?;
    report_dict(py, &report)
}

#[pyfunction]
fn logseries_pmf(lam: f64, n: u64) -> PyResult<f64> {
    pmf(lam, n).map_err(to_py)
}

/// Runs a verification target; keyword arguments override its defaults.
/// Returns the verdict as a dict with `pass`, `checks` and `data`.
#[pyfunction]
#[pyo3(signature = (target, lam=None, r=None, t_max=None, replicas=None, seed=None, workers=None, grid_dt=None, horizon=None))]
#[allow(clippy::too_many_arguments)]
fn verify<'py>(
    py: Python<'py>,
    target: &str,
    lam: Option<f64>,
    r: Option<f64>,
    t_max: Option<f64>,
    replicas: Option<u64>,
    seed: Option<u64>,
    workers: Option<usize>,
    grid_dt: Option<f64>,
    horizon: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let target: Target = target.parse().map_err(to_py)?;
    let mut cfg = target.defaults();
    cfg.lambda = lam.unwrap_or(cfg.lambda);
    cfg.r = r.unwrap_or(cfg.r);
    cfg.t_max = t_max.unwrap_or(cfg.t_max);
    cfg.replicas = replicas.unwrap_or(cfg.replicas);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.workers = workers.unwrap_or(cfg.workers);
    cfg.grid_dt = grid_dt.unwrap_or(cfg.grid_dt);
    cfg.horizon = horizon.or(cfg.horizon);
    let verdict = py.detach(|| run_target(target, &cfg)).map_err(to_py)?;
    let value = serde_json::json!({
        "target": verdict.target,
        "pass": verdict.pass,
        "config": verdict.config,
        "checks": verdict.checks,
        "data": verdict.data,
    });
    json_to_py(py, &value)
}

#[pymodule]
#[pyo3(name = "fitbd")]
fn fitbd_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ModelParams>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(regenerations, m)?)?;
    m.add_function(wrap_pyfunction!(solve_renewal_grid, m)?)?;
    m.add_function(wrap_pyfunction!(couple, m)?)?;
    m.add_function(wrap_pyfunction!(gof, m)?)?;
    m.add_function(wrap_pyfunction!(logseries_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}

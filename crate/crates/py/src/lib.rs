//! Python bindings: the path data model plus the solver entry points.
//!
//! Build the extension module and point `PYTHONPATH` at it:
//!
//! ```text
//! cargo build --release -p pathfbsde-py
//! cp target/release/libpathfbsde_py.so pathfbsde_py.so
//! python3 -c "import pathfbsde_py"
//! ```

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use pathfbsde::condexp::FeatureConfig;
use pathfbsde::picard::{EstimatorConfig, EstimatorKind, SchemeConfig, SolveResult};

fn err(e: pathfbsde::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Time partition `t_0 < ... < t_n`.
#[pyclass(name = "TimeGrid", module = "pathfbsde_py")]
struct PyTimeGrid {
    inner: pathfbsde::TimeGrid,
}

#[pymethods]
impl PyTimeGrid {
    #[new]
    fn new(nodes: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: pathfbsde::TimeGrid::new(nodes).map_err(err)?,
        })
    }

    #[staticmethod]
    fn uniform(start: f64, horizon: f64, n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: pathfbsde::TimeGrid::uniform(start, horizon, n).map_err(err)?,
        })
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.inner.nodes().to_vec()
    }

    fn mesh(&self) -> f64 {
        self.inner.mesh()
    }

    fn n_steps(&self) -> usize {
        self.inner.n_steps()
    }

    fn __repr__(&self) -> String {
        format!(
            "TimeGrid(start={}, horizon={}, n={})",
            self.inner.start(),
            self.inner.horizon(),
            self.inner.n_steps()
        )
    }
}

/// Piecewise-constant cadlag path.
#[pyclass(name = "DiscretePath", module = "pathfbsde_py")]
struct PyDiscretePath {
    inner: pathfbsde::DiscretePath,
}

#[pymethods]
impl PyDiscretePath {
    /// Builds a path from `[(time, [values...]), ...]` breakpoints.
    #[new]
    fn new(breakpoints: Vec<(f64, Vec<f64>)>) -> PyResult<Self> {
        let dim = breakpoints
            .first()
            .map(|(_, v)| v.len())
            .ok_or_else(|| PyValueError::new_err("need at least one breakpoint"))?;
        Ok(Self {
            inner: pathfbsde::DiscretePath::from_breakpoints(dim, breakpoints).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(text)
                .map_err(|e| PyValueError::new_err(e.to_string()))?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn end_time(&self) -> f64 {
        self.inner.end_time()
    }

    /// Right-continuous step evaluation (stopped-path extension past the end).
    fn value_at(&self, s: f64) -> Vec<f64> {
        self.inner.value_at(s).to_vec()
    }

    fn sup_norm(&self) -> f64 {
        self.inner.sup_norm()
    }

    fn __repr__(&self) -> String {
        format!(
            "DiscretePath(dim={}, breakpoints={}, end={})",
            self.inner.dim(),
            self.inner.len(),
            self.inner.end_time()
        )
    }
}

/// Concatenation `prefix ⊕_s suffix`.
#[pyfunction]
fn concat(prefix: &PyDiscretePath, suffix: &PyDiscretePath, s: f64) -> PyResult<PyDiscretePath> {
    Ok(PyDiscretePath {
        inner: pathfbsde::concat(&prefix.inner, &suffix.inner, s).map_err(err)?,
    })
}

/// `d_infinity((s, a), (s', b))` on stopped views.
#[pyfunction]
fn d_infinity(a: &PyDiscretePath, s_a: f64, b: &PyDiscretePath, s_b: f64) -> f64 {
    pathfbsde::d_infinity(&a.inner.stopped(s_a), &b.inner.stopped(s_b))
}

#[pyfunction]
fn problem_names() -> Vec<String> {
    pathfbsde::coeff::PROBLEM_NAMES
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn history_from(
    history: Option<Vec<(f64, Vec<f64>)>>,
    dim: usize,
) -> PyResult<pathfbsde::DiscretePath> {
    match history {
        Some(bp) => {
            let d = bp.first().map(|(_, v)| v.len()).unwrap_or(dim);
            pathfbsde::DiscretePath::from_breakpoints(d, bp).map_err(err)
        }
        None => pathfbsde::DiscretePath::constant(vec![0.0; dim]).map_err(err),
    }
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    grid: pathfbsde::TimeGrid,
    m: usize,
    samples: usize,
    seed: u64,
    estimator: &str,
    ninner: usize,
    ridge: f64,
    fresh_paths: bool,
    antithetic: bool,
) -> PyResult<SchemeConfig> {
    let kind = match estimator {
        "regression" => EstimatorKind::Regression,
        "nested" => EstimatorKind::Nested,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown estimator '{other}' (regression | nested)"
            )))
        }
    };
    Ok(SchemeConfig {
        grid,
        iterations: m,
        n_outer: samples,
        estimator: EstimatorConfig {
            kind,
            n_inner: ninner,
            ridge,
            features: FeatureConfig::default(),
        },
        seed,
        reuse_paths: !fresh_paths,
        antithetic,
    })
}

fn result_to_dict<'py>(py: Python<'py>, r: &SolveResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("Y0", r.y0)?;
    d.set_item("Y0_stderr", r.y0_stderr)?;
    d.set_item("Z0", r.z0.clone())?;
    d.set_item("Z0_stderr", r.z0_stderr.clone())?;
    let trace = PyList::empty(py);
    for e in &r.trace {
        let entry = PyDict::new(py);
        entry.set_item("m", e.m)?;
        entry.set_item("y0", e.y0)?;
        entry.set_item("z0", e.z0.clone())?;
        trace.append(entry)?;
    }
    d.set_item("trace", trace)?;
    d.set_item("wall_ms", r.wall_ms)?;
    d.set_item("seed", r.config.seed)?;
    d.set_item("n", r.config.grid.n_steps())?;
    d.set_item("m", r.config.iterations)?;
    Ok(d)
}

/// Solves the backward equation for a zoo problem and returns a result dict.
#[pyfunction]
#[pyo3(signature = (problem, n, m, samples, seed = 0, estimator = "regression",
                    implicit = false, ninner = 64, ridge = 0.0, history = None,
                    fresh_paths = false, antithetic = false))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    problem: &str,
    n: usize,
    m: usize,
    samples: usize,
    seed: u64,
    estimator: &str,
    implicit: bool,
    ninner: usize,
    ridge: f64,
    history: Option<Vec<(f64, Vec<f64>)>>,
    fresh_paths: bool,
    antithetic: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let zoo = pathfbsde::problem_zoo(problem).map_err(err)?;
    let cs = &zoo.coefficients;
    let hist = history_from(history, cs.dim_x())?;
    let grid = pathfbsde::TimeGrid::uniform(hist.end_time(), zoo.horizon, n).map_err(err)?;
    let config = build_config(
        grid.clone(),
        m,
        samples,
        seed,
        estimator,
        ninner,
        ridge,
        fresh_paths,
        antithetic,
    )?;
    let result = if implicit {
        pathfbsde::solve_implicit(cs, &hist, &grid, &config).map_err(err)?
    } else {
        pathfbsde::solve_picard(cs, &hist, &grid, &config).map_err(err)?
    };
    result_to_dict(py, &result)
}

/// PPDE value `u(t, gamma)` at the end of the supplied history.
#[pyfunction]
#[pyo3(signature = (problem, n, m, samples, seed = 0, history = None))]
fn evaluate_ppde<'py>(
    py: Python<'py>,
    problem: &str,
    n: usize,
    m: usize,
    samples: usize,
    seed: u64,
    history: Option<Vec<(f64, Vec<f64>)>>,
) -> PyResult<Bound<'py, PyDict>> {
    let zoo = pathfbsde::problem_zoo(problem).map_err(err)?;
    let cs = &zoo.coefficients;
    let hist = history_from(history, cs.dim_x())?;
    let grid = pathfbsde::TimeGrid::uniform(hist.end_time(), zoo.horizon, n).map_err(err)?;
    let config =
        build_config(grid.clone(), m, samples, seed, "regression", 64, 0.0, false, false)?;
    let result = pathfbsde::picard::evaluate_ppde(cs, &hist, &grid, &config).map_err(err)?;
    result_to_dict(py, &result)
}

/// Terminal-value summary of forward Euler trajectories.
#[pyfunction]
#[pyo3(signature = (problem, n, samples, seed = 0, history = None))]
fn simulate_summary<'py>(
    py: Python<'py>,
    problem: &str,
    n: usize,
    samples: usize,
    seed: u64,
    history: Option<Vec<(f64, Vec<f64>)>>,
) -> PyResult<Bound<'py, PyDict>> {
    let zoo = pathfbsde::problem_zoo(problem).map_err(err)?;
    let cs = &zoo.coefficients;
    let hist = history_from(history, cs.dim_x())?;
    let grid = pathfbsde::TimeGrid::uniform(hist.end_time(), zoo.horizon, n).map_err(err)?;
    let root = pathfbsde::SampleKey::new(seed);
    let mut sum = vec![0.0; cs.dim_x()];
    let mut sum_sq = vec![0.0; cs.dim_x()];
    for p in 0..samples {
        let traj =
            pathfbsde::euler::simulate(cs, &hist, &grid, &root.child(p as u64)).map_err(err)?;
        for (c, v) in traj.path.value_at(grid.horizon()).iter().enumerate() {
            sum[c] += v;
            sum_sq[c] += v * v;
        }
    }
    let nf = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let std: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| (sq / nf - m * m).max(0.0).sqrt())
        .collect();
    let d = PyDict::new(py);
    d.set_item("terminal_mean", mean)?;
    d.set_item("terminal_std", std)?;
    d.set_item("samples", samples)?;
    Ok(d)
}

/// Coupled strong error between a coarse and a fine Euler discretization.
#[pyfunction]
#[pyo3(signature = (problem, coarse_n, fine_n, samples, seed = 0))]
fn strong_error(
    problem: &str,
    coarse_n: usize,
    fine_n: usize,
    samples: usize,
    seed: u64,
) -> PyResult<f64> {
    let zoo = pathfbsde::problem_zoo(problem).map_err(err)?;
    let cs = &zoo.coefficients;
    let hist = pathfbsde::DiscretePath::constant(vec![0.0; cs.dim_x()]).map_err(err)?;
    let coarse = pathfbsde::TimeGrid::uniform(0.0, zoo.horizon, coarse_n).map_err(err)?;
    let fine = pathfbsde::TimeGrid::uniform(0.0, zoo.horizon, fine_n).map_err(err)?;
    pathfbsde::euler::strong_error(cs, &hist, &coarse, &fine, samples, seed).map_err(err)
}

#[pymodule]
fn pathfbsde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTimeGrid>()?;
    m.add_class::<PyDiscretePath>()?;
    m.add_function(wrap_pyfunction!(concat, m)?)?;
    m.add_function(wrap_pyfunction!(d_infinity, m)?)?;
    m.add_function(wrap_pyfunction!(problem_names, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_ppde, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_summary, m)?)?;
    m.add_function(wrap_pyfunction!(strong_error, m)?)?;
    Ok(())
}

//! Python bindings: parameters, domains, reflection kernels, the grid
//! model and the experiment runner.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use reflected_stable::experiment::{self, ExperimentConfig};
use reflected_stable::geometry::Grid;
use reflected_stable::killed::{assemble_dirichlet_generator, green_operator, GridOperator};
use reflected_stable::pathsim::{simulate_ladder_batch, LadderOptions, StartLaw};
use reflected_stable::perturbation::{
    full_generator, perturbation_matrix, reflected_kernel, DuhamelEngine, SeriesOptions,
};
use reflected_stable::reflection::{make_constant_kernel, make_dirac_kernel, make_projection_kernel, EntryLaw};
use reflected_stable::stationary::{chain_kernel, kappa_closed_form, kappa_generator_nullvector, stationary_p};
use reflected_stable::{Error, Point};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config { .. }
        | Error::InvalidAlpha(_)
        | Error::InvalidDimension(_)
        | Error::InvalidParameter { .. }
        | Error::OutsideRegion { .. }
        | Error::Geometry(_)
        | Error::Kernel(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[pyclass(name = "StableParams", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyStableParams {
    inner: reflected_stable::StableParams,
}

#[pymethods]
impl PyStableParams {
    #[new]
    fn new(d: usize, alpha: f64) -> PyResult<Self> {
        Ok(PyStableParams {
            inner: reflected_stable::StableParams::new(d, alpha).map_err(py_err)?,
        })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    /// The Lévy constant `c_{d,α}`.
    #[getter]
    fn c_levy(&self) -> f64 {
        self.inner.c_levy()
    }

    fn levy_density(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        self.inner.levy_density(&Point::new(&x), &Point::new(&y)).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("StableParams(d={}, alpha={})", self.inner.d(), self.inner.alpha())
    }
}

#[pyclass(name = "Domain", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDomain {
    inner: reflected_stable::Domain,
}

#[pymethods]
impl PyDomain {
    #[staticmethod]
    fn interval(a: f64, b: f64) -> PyResult<Self> {
        Ok(PyDomain {
            inner: reflected_stable::Domain::interval(a, b).map_err(py_err)?,
        })
    }

    /// Union of disjoint open intervals.
    #[staticmethod]
    fn cells(cells: Vec<(f64, f64)>) -> PyResult<Self> {
        Ok(PyDomain {
            inner: reflected_stable::Domain::cells(cells).map_err(py_err)?,
        })
    }

    fn contains(&self, x: f64) -> bool {
        self.inner.contains(&Point::scalar(x))
    }

    fn boundary_distance(&self, x: f64) -> f64 {
        self.inner.boundary_distance(&Point::scalar(x))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("domain serializes")
    }
}

#[pyclass(name = "ReflectionKernel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyReflectionKernel {
    inner: reflected_stable::ReflectionKernel,
}

#[pymethods]
impl PyReflectionKernel {
    /// `μ(z, ·)` uniform on `[lo, hi]` for every exit point.
    #[staticmethod]
    fn constant_uniform(domain: &PyDomain, lo: f64, hi: f64) -> PyResult<Self> {
        Ok(PyReflectionKernel {
            inner: make_constant_kernel(&domain.inner, EntryLaw::uniform(lo, hi)).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn dirac(domain: &PyDomain, x0: f64) -> PyResult<Self> {
        Ok(PyReflectionKernel {
            inner: make_dirac_kernel(&domain.inner, Point::scalar(x0)).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn projection(domain: &PyDomain, depth: f64, width: f64) -> PyResult<Self> {
        Ok(PyReflectionKernel {
            inner: make_projection_kernel(&domain.inner, depth, width).map_err(py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta()
    }

    /// `μ(z, [lo, hi])`.
    fn mass(&self, z: f64, lo: f64, hi: f64) -> PyResult<f64> {
        self.inner
            .mass(&Point::scalar(z), &reflected_stable::Region::interval(lo, hi))
            .map_err(py_err)
    }
}

/// Grid discretization of the reflected process on a one-dimensional domain.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    params: reflected_stable::StableParams,
    mu: reflected_stable::ReflectionKernel,
    grid: Arc<Grid>,
    l: GridOperator,
    m: GridOperator,
    a: GridOperator,
    green: GridOperator,
    engine: DuhamelEngine,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (params, kernel, n_cells = 400))]
    fn new(params: &PyStableParams, kernel: &PyReflectionKernel, n_cells: usize) -> PyResult<Self> {
        let p = params.inner;
        let mu = kernel.inner.clone();
        let grid = Grid::build(mu.domain(), n_cells).map_err(py_err)?;
        let l = assemble_dirichlet_generator(&grid, &p).map_err(py_err)?;
        let m = perturbation_matrix(&grid, &p, &mu).map_err(py_err)?;
        let a = full_generator(&l, &m).map_err(py_err)?;
        let green = green_operator(&l).map_err(py_err)?;
        let engine = DuhamelEngine::new(&l, &m).map_err(py_err)?;
        Ok(PyModel {
            params: p,
            mu,
            grid,
            l,
            m,
            a,
            green,
            engine,
        })
    }

    fn nodes(&self) -> Vec<f64> {
        self.grid.nodes().to_vec()
    }

    fn nearest_node(&self, x: f64) -> usize {
        self.grid.nearest_node(x)
    }

    fn generator(&self) -> Vec<Vec<f64>> {
        rows(self.l.entries())
    }

    fn perturbation(&self) -> Vec<Vec<f64>> {
        rows(self.m.entries())
    }

    /// Cell masses of the Green operator.
    fn green(&self) -> Vec<Vec<f64>> {
        rows(self.green.entries())
    }

    /// Reflected transition kernel `K(t)` summed from the perturbation series.
    fn reflected_kernel(&self, t: f64) -> PyResult<Vec<Vec<f64>>> {
        let s = self.engine.series(t, &SeriesOptions::default()).map_err(py_err)?;
        Ok(rows(reflected_kernel(&s).map_err(py_err)?.entries()))
    }

    /// Series diagnostics at time `t`: level masses and the fitted (c, γ).
    fn series_report<'py>(&self, py: Python<'py>, t: f64) -> PyResult<Bound<'py, PyDict>> {
        let s = self.engine.series(t, &SeriesOptions::default()).map_err(py_err)?;
        let r = s.report();
        let d = PyDict::new(py);
        d.set_item("t", r.t)?;
        d.set_item("truncation_n", r.truncation_n)?;
        d.set_item("level_mass", r.level_mass)?;
        d.set_item("gamma", r.gamma)?;
        d.set_item("c", r.c)?;
        d.set_item("r_squared", r.r_squared)?;
        d.set_item("tail_bound", r.tail_bound)?;
        Ok(d)
    }

    /// Stationary laws: chain law `p`, `κ` from `p` and the Green operator,
    /// and the generator null vector, as cell masses.
    fn stationary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let chain = chain_kernel(&self.green, &self.m).map_err(py_err)?;
        let sp = stationary_p(&chain, 1e-12).map_err(py_err)?;
        let closed = kappa_closed_form(&sp.measure, &self.green).map_err(py_err)?;
        let null = kappa_generator_nullvector(&self.a).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("p", sp.measure.masses().to_vec())?;
        d.set_item("kappa_closed_form", closed.masses().to_vec())?;
        d.set_item("kappa_null_vector", null.measure.masses().to_vec())?;
        d.set_item("beta_hat", sp.two_step.beta_hat)?;
        d.set_item("tv_closed_null", closed.tv(&null.measure))?;
        Ok(d)
    }

    /// Reflection counts `N_t` at the given times for `replicas` simulated
    /// paths started at `x`.
    #[pyo3(signature = (x, times, replicas, seed, dt = 1e-3))]
    fn simulate_counts(
        &self,
        py: Python<'_>,
        x: f64,
        times: Vec<f64>,
        replicas: usize,
        seed: u64,
        dt: f64,
    ) -> PyResult<Vec<Vec<u64>>> {
        let horizon = times.iter().cloned().fold(dt, f64::max);
        let mut opts = LadderOptions::new(dt, horizon);
        opts.checkpoints = times;
        let paths = py
            .detach(|| {
                simulate_ladder_batch(
                    &self.params,
                    self.grid.domain(),
                    &self.mu,
                    &StartLaw::Point(Point::scalar(x)),
                    &opts,
                    replicas,
                    seed,
                )
            })
            .map_err(py_err)?;
        Ok(paths.iter().map(|p| p.checkpoints.iter().map(|c| c.n).collect()).collect())
    }
}

/// Validates a JSON config and returns the resolved plan.
#[pyfunction]
fn describe(config_json: &str) -> PyResult<Vec<String>> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    experiment::describe(&cfg).map_err(py_err)
}

/// Runs an experiment; returns the manifest as a JSON string.
#[pyfunction]
#[pyo3(signature = (config_json, threads = None))]
fn run_experiment(py: Python<'_>, config_json: &str, threads: Option<usize>) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    let out = py.detach(|| experiment::run_with_threads(&cfg, threads)).map_err(py_err)?;
    serde_json::to_string(&out.manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn reflected_stable_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStableParams>()?;
    m.add_class::<PyDomain>()?;
    m.add_class::<PyReflectionKernel>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(describe, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

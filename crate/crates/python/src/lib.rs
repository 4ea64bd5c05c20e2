//! Python bindings for `crossdiff`.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use crossdiff::analysis::{self, QuadraticForm};
use crossdiff::config::{self, RunConfig, PRESETS};
use crossdiff::experiment;
use crossdiff::mesh;
use crossdiff::model::{self, SktCoefficients};
use crossdiff::scheme;
use crossdiff::solver::{self, SolverConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Converts any serializable value into plain Python objects via JSON.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Mesh", module = "pycrossdiff", frozen)]
struct PyMesh {
    inner: mesh::Mesh,
}

#[pymethods]
impl PyMesh {
    #[staticmethod]
    fn interval(a: f64, b: f64, cells: usize) -> PyResult<Self> {
        Ok(PyMesh { inner: mesh::build_interval_mesh(a, b, cells).map_err(value_err)? })
    }

    #[staticmethod]
    fn rectangle(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> PyResult<Self> {
        Ok(PyMesh { inner: mesh::build_rectangle_mesh(x, y, nx, ny).map_err(value_err)? })
    }

    #[staticmethod]
    fn acute_triangulation(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> PyResult<Self> {
        let (v, t) = mesh::structured_acute_triangulation(x, y, nx, ny).map_err(value_err)?;
        Ok(PyMesh { inner: mesh::import_triangulation(&v, &t).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_triangles(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> PyResult<Self> {
        Ok(PyMesh { inner: mesh::import_triangulation(&vertices, &triangles).map_err(value_err)? })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyMesh { inner: mesh::read_triangulation(&path).map_err(value_err)? })
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn n_cells(&self) -> usize {
        self.inner.n_cells()
    }

    #[getter]
    fn size(&self) -> f64 {
        self.inner.size()
    }

    #[getter]
    fn zeta(&self) -> f64 {
        self.inner.zeta()
    }

    #[getter]
    fn domain_measure(&self) -> f64 {
        self.inner.domain_measure()
    }

    fn centers(&self) -> Vec<[f64; 2]> {
        self.inner.cells().iter().map(|c| c.center).collect()
    }

    fn measures(&self) -> Vec<f64> {
        self.inner.measures()
    }

    fn __repr__(&self) -> String {
        format!("Mesh(dimension={}, cells={})", self.inner.dimension(), self.inner.n_cells())
    }
}

#[pyclass(name = "Model", module = "pycrossdiff", frozen)]
struct PyModel {
    inner: model::Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (a0, a, b0=None, b=None, pi=None))]
    fn skt(
        a0: Vec<f64>,
        a: Vec<Vec<f64>>,
        b0: Option<Vec<f64>>,
        b: Option<Vec<Vec<f64>>>,
        pi: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let coeffs = SktCoefficients { a0, a, b0: b0.unwrap_or_default(), b: b.unwrap_or_default() };
        Ok(PyModel { inner: model::skt_model(&coeffs, pi).map_err(value_err)? })
    }

    /// Two-species SKT system with the Lotka–Volterra sources used in the
    /// pattern and niche experiments.
    #[staticmethod]
    fn reference_skt2() -> PyResult<Self> {
        Ok(PyModel { inner: model::skt_model(&model::reference_skt2(), None).map_err(value_err)? })
    }

    #[staticmethod]
    fn reference_skt3() -> PyResult<Self> {
        Ok(PyModel { inner: model::skt_model(&model::reference_skt3(), None).map_err(value_err)? })
    }

    #[staticmethod]
    fn seawater(delta: f64) -> PyResult<Self> {
        Ok(PyModel { inner: model::seawater_model(delta).map_err(value_err)? })
    }

    #[staticmethod]
    fn keller_segel(delta: f64) -> PyResult<Self> {
        Ok(PyModel { inner: model::keller_segel_model(delta).map_err(value_err)? })
    }

    #[staticmethod]
    fn fluid_mixture(a0: Vec<f64>, a: Vec<Vec<f64>>, pi: Vec<f64>) -> PyResult<Self> {
        Ok(PyModel { inner: model::fluid_mixture_model(a0, a, pi).map_err(value_err)? })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn n_species(&self) -> usize {
        self.inner.n_species()
    }

    #[getter]
    fn pi(&self) -> Vec<f64> {
        self.inner.pi().to_vec()
    }

    #[getter]
    fn c_a(&self) -> f64 {
        self.inner.c_a()
    }

    #[getter]
    fn c_f(&self) -> f64 {
        self.inner.c_f()
    }

    #[getter]
    fn entropic(&self) -> bool {
        self.inner.is_entropic()
    }

    fn diffusion_matrix(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_len(&u)?;
        Ok(self.inner.diffusion_matrix(&u))
    }

    fn source(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_len(&u)?;
        Ok(self.inner.source(&u))
    }

    /// Checks the structural hypotheses on random samples.
    #[pyo3(signature = (samples=2000, seed=0))]
    fn verify<'py>(&self, py: Python<'py>, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &model::verify_hypotheses(&self.inner, samples, seed))
    }

    fn __repr__(&self) -> String {
        format!("Model(name={:?}, n_species={})", self.inner.name(), self.inner.n_species())
    }
}

impl PyModel {
    fn check_len(&self, u: &[f64]) -> PyResult<()> {
        if u.len() != self.inner.n_species() {
            return Err(value_err(format!("expected {} values", self.inner.n_species())));
        }
        Ok(())
    }
}

#[pyclass(name = "State", module = "pycrossdiff", skip_from_py_object)]
#[derive(Clone)]
struct PyState {
    inner: scheme::State,
}

#[pymethods]
impl PyState {
    /// One list of cell values per species.
    #[new]
    #[pyo3(signature = (species, time=0.0))]
    fn new(species: Vec<Vec<f64>>, time: f64) -> PyResult<Self> {
        Ok(PyState { inner: scheme::State::from_species(&species, time).map_err(value_err)? })
    }

    /// Cell averages of `f(species, x, y)` computed with `refine`-fold
    /// sub-quadrature.
    #[staticmethod]
    #[pyo3(signature = (mesh, model, f, refine=4))]
    fn project(mesh: &PyMesh, model: &PyModel, f: Bound<'_, PyAny>, refine: usize) -> PyResult<Self> {
        let err = std::cell::RefCell::new(None);
        let state = scheme::project_initial(&mesh.inner, &model.inner, refine, |i, x| {
            match f.call1((i, x[0], x[1])).and_then(|v| v.extract::<f64>()) {
                Ok(v) => v,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            }
        });
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        Ok(PyState { inner: state.map_err(value_err)? })
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.time
    }

    #[getter]
    fn n_species(&self) -> usize {
        self.inner.n_species()
    }

    #[getter]
    fn n_cells(&self) -> usize {
        self.inner.n_cells()
    }

    fn species(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.n_species() {
            return Err(value_err(format!("species index {i} out of range")));
        }
        Ok(self.inner.species(i))
    }

    fn masses(&self, mesh: &PyMesh) -> Vec<f64> {
        self.inner.masses(&mesh.inner)
    }

    fn __repr__(&self) -> String {
        format!("State(n_species={}, n_cells={}, time={})", self.inner.n_species(), self.inner.n_cells(), self.inner.time)
    }
}

/// Implicit Euler from `state` to `t_end`; returns the final state and one
/// report per accepted step.
#[pyfunction]
#[pyo3(signature = (mesh, model, state, t_end, dt_init=1e-5, dt_max=1e-2, dt_min=1e-8, adaptive=true, newton_tol=1e-8))]
#[allow(clippy::too_many_arguments)]
fn advance<'py>(
    py: Python<'py>,
    mesh: &PyMesh,
    model: &PyModel,
    state: &PyState,
    t_end: f64,
    dt_init: f64,
    dt_max: f64,
    dt_min: f64,
    adaptive: bool,
    newton_tol: f64,
) -> PyResult<(PyState, Bound<'py, PyAny>)> {
    let cfg = SolverConfig { dt_init, dt_max, dt_min, adaptive, newton_tol, ..SolverConfig::default() };
    let s = scheme::Scheme::new(&mesh.inner, &model.inner);
    let (end, reports) = py
        .detach(|| solver::advance(&s, &state.inner, t_end, &cfg))
        .map_err(runtime_err)?;
    Ok((PyState { inner: end }, to_py(py, &reports)?))
}

#[pyfunction]
fn log_mean(a: f64, b: f64) -> f64 {
    scheme::log_mean(a, b)
}

#[pyfunction]
fn discrete_entropy(mesh: &PyMesh, model: &PyModel, state: &PyState) -> f64 {
    analysis::discrete_entropy(&mesh.inner, &model.inner, &state.inner)
}

#[pyfunction]
fn relative_entropy(mesh: &PyMesh, model: &PyModel, state: &PyState, ubar: Vec<f64>) -> PyResult<f64> {
    analysis::relative_entropy(&mesh.inner, &model.inner, &state.inner, &ubar).map_err(value_err)
}

/// Instability test for a two-species SKT equilibrium on a rectangle.
#[pyfunction]
#[pyo3(signature = (a0, a, b0, b, ustar, x=(0.0, 1.0), y=(0.0, 1.0), mode_cap=20, form="trace_leading"))]
#[allow(clippy::too_many_arguments)]
fn stability<'py>(
    py: Python<'py>,
    a0: Vec<f64>,
    a: Vec<Vec<f64>>,
    b0: Vec<f64>,
    b: Vec<Vec<f64>>,
    ustar: [f64; 2],
    x: (f64, f64),
    y: (f64, f64),
    mode_cap: usize,
    form: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let form: QuadraticForm = serde_json::from_value(serde_json::Value::String(form.into())).map_err(value_err)?;
    let coeffs = SktCoefficients { a0, a, b0, b };
    let report = analysis::stability_predicate(&coeffs, ustar, (x, y), mode_cap, form).map_err(value_err)?;
    to_py(py, &report)
}

#[pyfunction]
fn presets() -> Vec<(String, String)> {
    PRESETS.iter().map(|p| (p.name.to_string(), p.summary.to_string())).collect()
}

fn load_config(config: &str) -> PyResult<RunConfig> {
    let path = PathBuf::from(config);
    if path.is_file() {
        RunConfig::load(&path).map_err(value_err)
    } else {
        config::preset(config).map_err(value_err)
    }
}

/// Checks a config file or preset without running it.
#[pyfunction]
fn validate<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = load_config(config)?;
    to_py(py, &experiment::validate(&cfg).map_err(value_err)?)
}

/// Runs a config file or preset, writing artifacts to `out_dir`.
#[pyfunction]
fn run<'py>(py: Python<'py>, config: &str, out_dir: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let cfg = load_config(config)?;
    let s = py.detach(|| experiment::run(&cfg, &out_dir)).map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("out_dir", s.out_dir)?;
    d.set_item("mesh", to_py(py, &s.mesh)?)?;
    d.set_item("model", to_py(py, &s.model)?)?;
    d.set_item("steps", s.steps.len())?;
    d.set_item("snapshot_times", s.snapshot_times)?;
    d.set_item("final_state", s.final_state.map(|inner| PyState { inner }))?;
    d.set_item("convergence", to_py(py, &s.convergence)?)?;
    d.set_item("stability", to_py(py, &s.stability)?)?;
    d.set_item("decay", to_py(py, &s.decay)?)?;
    d.set_item("niche", to_py(py, &s.niche)?)?;
    d.set_item("pattern", to_py(py, &s.pattern)?)?;
    Ok(d)
}

#[pymodule]
fn pycrossdiff(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyState>()?;
    m.add_function(wrap_pyfunction!(advance, m)?)?;
    m.add_function(wrap_pyfunction!(log_mean, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(relative_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}

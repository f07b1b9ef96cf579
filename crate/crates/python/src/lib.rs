use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use varhardy::bmo::bmo_norm as core_bmo_norm;
use varhardy::cli::run_suite;
use varhardy::exponent::ExponentFunction;
use varhardy::fractional::{fractional_apply as core_frac, FractionalParams};
use varhardy::grid::io::{load_grid_function, save_grid_function};
use varhardy::grid::{DyadicFamily, GridBox, GridFunction};
use varhardy::hardy::{self, default_ladder, MolecularDecomposition};
use varhardy::lebesgue;
use varhardy::semigroup::{OperatorParams, SemigroupSpec};
use varhardy::suites::SuiteConfig;

fn err(e: varhardy::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Grid", frozen, from_py_object)]
#[derive(Clone)]
struct PyGrid(GridBox);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (lower, upper, points, dim = 1))]
    fn new(lower: f64, upper: f64, points: usize, dim: usize) -> PyResult<Self> {
        GridBox::new(dim, &vec![lower; dim], &vec![upper; dim], points)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.0.h()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.0.node_count()
    }

    /// Node coordinates, one list per node.
    fn coords(&self) -> Vec<Vec<f64>> {
        (0..self.0.node_count())
            .map(|i| self.0.coord(i)[..self.0.dim()].to_vec())
            .collect()
    }
}

#[pyclass(name = "GridFunction", frozen, from_py_object)]
#[derive(Clone)]
struct PyGridFunction(GridFunction);

#[pymethods]
impl PyGridFunction {
    #[new]
    fn new(grid: &PyGrid, values: Vec<f64>) -> PyResult<Self> {
        GridFunction::new(grid.0.clone(), values)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_grid_function(&path).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_grid_function(&path, &self.0).map_err(err)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid().clone())
    }

    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn l2_norm(&self) -> f64 {
        self.0.l2_norm()
    }

    fn __len__(&self) -> usize {
        self.0.values().len()
    }
}

#[pyclass(name = "Exponent", frozen, from_py_object)]
#[derive(Clone)]
struct PyExponent(ExponentFunction);

#[pymethods]
impl PyExponent {
    /// Preset name (`const:2`, `bump:0.9:0.75`, `paper-example-1`, ...) or an expression in `x`.
    #[new]
    fn new(spec: &str, grid: &PyGrid) -> PyResult<Self> {
        ExponentFunction::preset(spec, &grid.0)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn p_minus(&self) -> f64 {
        self.0.p_minus()
    }

    #[getter]
    fn p_plus(&self) -> f64 {
        self.0.p_plus()
    }
}

#[pyclass(name = "Semigroup", frozen, from_py_object)]
#[derive(Clone)]
struct PySemigroup(SemigroupSpec);

#[pymethods]
impl PySemigroup {
    #[staticmethod]
    fn gaussian() -> Self {
        Self(SemigroupSpec::gaussian())
    }

    /// Kernel profile `g(r)` with order `m` and declared decay exponent.
    #[staticmethod]
    fn custom(g: &str, m: f64, epsilon: f64) -> PyResult<Self> {
        SemigroupSpec::custom(g, m, epsilon).map(Self).map_err(err)
    }

    #[getter]
    fn m(&self) -> f64 {
        self.0.m
    }
}

fn spec_or_default(spec: Option<&PySemigroup>) -> SemigroupSpec {
    spec.map(|s| s.0.clone())
        .unwrap_or_else(SemigroupSpec::gaussian)
}

#[pyclass(name = "MolecularDecomposition", frozen)]
struct PyMolecular(MolecularDecomposition, SemigroupSpec);

#[pymethods]
impl PyMolecular {
    #[getter]
    fn b_value(&self) -> f64 {
        self.0.b_value
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.0.residual
    }

    /// Real parts of the coefficients.
    fn lambdas(&self) -> Vec<f64> {
        self.0.lambdas.iter().map(|l| l.re).collect()
    }

    fn reconstruct(&self) -> PyGridFunction {
        PyGridFunction(self.0.reconstruct())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path, &self.1).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (d, s) = MolecularDecomposition::load(&path).map_err(err)?;
        Ok(Self(d, s))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyfunction]
#[pyo3(signature = (f, p, tol = lebesgue::DEFAULT_TOL))]
fn luxemburg_norm(f: &PyGridFunction, p: &PyExponent, tol: f64) -> PyResult<f64> {
    lebesgue::luxemburg_norm(&f.0, &p.0, tol)
        .map(|r| r.value)
        .map_err(err)
}

#[pyfunction]
fn modular(f: &PyGridFunction, p: &PyExponent) -> f64 {
    lebesgue::modular(&f.0, &p.0)
}

#[pyfunction]
#[pyo3(signature = (f, spec = None))]
fn lusin_area(f: &PyGridFunction, spec: Option<&PySemigroup>) -> PyResult<PyGridFunction> {
    let spec = spec_or_default(spec);
    let ladder = default_ladder(f.0.grid(), &spec).map_err(err)?;
    hardy::lusin_area(&f.0, &spec, &ladder)
        .map(PyGridFunction)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (f, p, spec = None))]
fn hardy_norm(f: &PyGridFunction, p: &PyExponent, spec: Option<&PySemigroup>) -> PyResult<f64> {
    let spec = spec_or_default(spec);
    let ladder = default_ladder(f.0.grid(), &spec).map_err(err)?;
    hardy::hardy_norm(&f.0, &p.0, &spec, &ladder).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (f, p, spec = None))]
fn molecular_decompose(
    f: &PyGridFunction,
    p: &PyExponent,
    spec: Option<&PySemigroup>,
) -> PyResult<PyMolecular> {
    let spec = spec_or_default(spec);
    let ladder = default_ladder(f.0.grid(), &spec).map_err(err)?;
    let params = OperatorParams::for_exponent(&p.0, f.0.grid().dim(), spec.m, None).map_err(err)?;
    let d = hardy::molecular_decompose(&f.0, &p.0, &spec, params, &ladder).map_err(err)?;
    Ok(PyMolecular(d, spec))
}

#[pyfunction]
fn compute_cms(m: f64, s: usize, s0: usize) -> PyResult<f64> {
    hardy::compute_cms(m, s, s0).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (f, p, depth = None, spec = None))]
fn bmo_norm(
    f: &PyGridFunction,
    p: &PyExponent,
    depth: Option<usize>,
    spec: Option<&PySemigroup>,
) -> PyResult<f64> {
    let spec = spec_or_default(spec);
    let grid = f.0.grid();
    let depth = depth.unwrap_or_else(|| DyadicFamily::max_depth(grid).min(6));
    let family = DyadicFamily::new(grid, depth).map_err(err)?;
    let params = OperatorParams::for_exponent(&p.0, grid.dim(), spec.m, None).map_err(err)?;
    core_bmo_norm(&f.0, &p.0, params.s0, &spec, &family).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (f, gamma, spec = None))]
fn fractional_apply(
    f: &PyGridFunction,
    gamma: f64,
    spec: Option<&PySemigroup>,
) -> PyResult<PyGridFunction> {
    let spec = spec_or_default(spec);
    let params = FractionalParams::new(gamma, spec.m, f.0.grid().dim()).map_err(err)?;
    core_frac(&f.0, params, &spec)
        .map(PyGridFunction)
        .map_err(err)
}

/// Runs the suites of a TOML config (empty string: defaults) and returns
/// the reports as JSON strings.
#[pyfunction]
#[pyo3(signature = (config, out_dir))]
fn run_suites(py: Python<'_>, config: &str, out_dir: PathBuf) -> PyResult<Vec<String>> {
    let cfg = if config.trim().is_empty() {
        SuiteConfig::default()
    } else {
        SuiteConfig::from_toml(config).map_err(err)?
    };
    let reports = py.detach(|| run_suite(&cfg, &out_dir)).map_err(err)?;
    reports
        .iter()
        .map(|r| serde_json::to_string(r).map_err(|e| PyValueError::new_err(e.to_string())))
        .collect()
}

#[pymodule]
fn varhardy_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyGridFunction>()?;
    m.add_class::<PyExponent>()?;
    m.add_class::<PySemigroup>()?;
    m.add_class::<PyMolecular>()?;
    m.add_function(wrap_pyfunction!(luxemburg_norm, m)?)?;
    m.add_function(wrap_pyfunction!(modular, m)?)?;
    m.add_function(wrap_pyfunction!(lusin_area, m)?)?;
    m.add_function(wrap_pyfunction!(hardy_norm, m)?)?;
    m.add_function(wrap_pyfunction!(molecular_decompose, m)?)?;
    m.add_function(wrap_pyfunction!(compute_cms, m)?)?;
    m.add_function(wrap_pyfunction!(bmo_norm, m)?)?;
    m.add_function(wrap_pyfunction!(fractional_apply, m)?)?;
    m.add_function(wrap_pyfunction!(run_suites, m)?)?;
    Ok(())
}

//! Python bindings. Reports come back as plain dicts decoded from the same
//! JSON the command-line tool writes.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::Value;
use tflpi::charts::{self, ChartResult};
use tflpi::liegeom::{self, VectorField};
use tflpi::ltflpi::{self, lie_chain};
use tflpi::ode::OdeOptions;
use tflpi::sim::{simulate_closed_loop, SimSetup};
use tflpi::sysmodel::{self, parse_output_expr};
use tflpi::{load_system, parse, Config, Error, SystemFile, VarTable};

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn config(
    tol_rank: Option<f64>,
    tol_zero: Option<f64>,
    samples: Option<usize>,
    radius: Option<f64>,
) -> PyResult<Config> {
    let mut cfg = Config::default();
    if let Some(v) = tol_rank {
        cfg.tol.rank_rel = v;
    }
    if let Some(v) = tol_zero {
        cfg.tol.zero = v;
    }
    if let Some(v) = samples {
        cfg.sampling.count = v;
    }
    if let Some(v) = radius {
        cfg.sampling.radius = v;
    }
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// A parsed system file: plant, target set and optional parameters.
#[pyclass(name = "System", module = "tflpi_py")]
struct PySystem {
    file: SystemFile,
}

#[pymethods]
impl PySystem {
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            file: load_system(text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PyValueError::new_err(format!("cannot read {path}: {e}")))?;
        Self::from_text(&text)
    }

    #[getter]
    fn n(&self) -> usize {
        self.file.system.n()
    }

    #[getter]
    fn nstar(&self) -> usize {
        self.file.target.nstar()
    }

    #[getter]
    fn vars(&self) -> Vec<String> {
        self.file.system.vars().names().to_vec()
    }

    #[getter]
    fn x0(&self) -> Vec<f64> {
        self.file.target.x0().to_vec()
    }

    #[getter]
    fn grid(&self) -> Vec<Vec<f64>> {
        self.file.grid.clone()
    }

    #[pyo3(signature = (*, tol_rank=None, tol_zero=None, samples=None, radius=None))]
    fn validate<'py>(
        &self,
        py: Python<'py>,
        tol_rank: Option<f64>,
        tol_zero: Option<f64>,
        samples: Option<usize>,
        radius: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = config(tol_rank, tol_zero, samples, radius)?;
        to_py(py, &sysmodel::validate(&self.file.system, &self.file.target, &cfg))
    }

    #[pyo3(signature = (*, tol_rank=None, tol_zero=None, samples=None, radius=None))]
    fn check_ltflpi<'py>(
        &self,
        py: Python<'py>,
        tol_rank: Option<f64>,
        tol_zero: Option<f64>,
        samples: Option<usize>,
        radius: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = config(tol_rank, tol_zero, samples, radius)?;
        let rep = ltflpi::check_ltflpi(&self.file.system, &self.file.target, &cfg).map_err(py_err)?;
        to_py(py, &rep)
    }

    /// Uses the file's grid unless `grid` is given.
    #[pyo3(signature = (grid=None, cylinder=false))]
    fn check_gtflpi<'py>(
        &self,
        py: Python<'py>,
        grid: Option<Vec<Vec<f64>>>,
        cylinder: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let grid = grid.unwrap_or_else(|| self.file.grid.clone());
        let rep = ltflpi::check_gtflpi(
            &self.file.system,
            &self.file.target,
            &grid,
            cylinder,
            &Config::default(),
        )
        .map_err(py_err)?;
        to_py(py, &rep)
    }

    fn check_commuting<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let rep = ltflpi::check_commuting(&self.file.system, &self.file.target).map_err(py_err)?;
        to_py(py, &rep)
    }

    /// Relative degree, zero dynamics and observability of `lam`, written
    /// over the states or the outputs `y1..yp`.
    fn reldeg<'py>(&self, py: Python<'py>, lam: &str) -> PyResult<Bound<'py, PyAny>> {
        let l = parse_output_expr(lam, &self.file.system).map_err(py_err)?;
        let rep = ltflpi::check_output(&l, &self.file.system, &self.file.target, &Config::default())
            .map_err(py_err)?;
        to_py(py, &rep)
    }

    fn normal_form<'py>(&self, py: Python<'py>, lam: &str) -> PyResult<Bound<'py, PyAny>> {
        let l = parse_output_expr(lam, &self.file.system).map_err(py_err)?;
        let nf = charts::normal_form(&l, &self.file.system, &self.file.target, None, &Config::default())
            .map_err(py_err)?;
        to_py(py, &nf)
    }

    #[pyo3(signature = (radius=None))]
    fn construct(&self, radius: Option<f64>) -> PyResult<Chart> {
        let cfg = config(None, None, None, radius)?;
        let inner = charts::construct(&self.file.system, &self.file.target, &cfg).map_err(py_err)?;
        Ok(Chart { inner })
    }

    /// Closed-loop run; keyword arguments override the file's parameters.
    #[pyo3(signature = (*, eps=None, t_final=None, sat=None, lam=None))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        eps: Option<f64>,
        t_final: Option<f64>,
        sat: Option<f64>,
        lam: Option<&str>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let f = &self.file;
        let l = match lam {
            Some(t) => parse_output_expr(t, &f.system).map_err(py_err)?,
            None => f
                .lambda
                .clone()
                .ok_or_else(|| PyValueError::new_err("no [lambda] in the file; pass lam="))?,
        };
        let r = f.target.codim();
        let mut over = BTreeMap::new();
        for (k, v) in [("eps", eps), ("T", t_final), ("sat", sat)] {
            if let Some(v) = v {
                over.insert(k.to_string(), format!("{v:e}"));
            }
        }
        let setup = SimSetup::from_params(f.system.n(), r, &f.params, &over).map_err(py_err)?;
        let chain = lie_chain(&l, f.system.f(), r - 1);
        let tr = simulate_closed_loop(
            &f.system,
            &f.target,
            &chain,
            &setup.observer,
            &setup.x_init,
            &setup.xihat_init,
            setup.timing,
            OdeOptions::default(),
        )
        .map_err(py_err)?;
        to_py(py, &tr)
    }

    fn __repr__(&self) -> String {
        format!(
            "System(n={}, nstar={}, vars={:?})",
            self.n(),
            self.nstar(),
            self.vars()
        )
    }
}

/// A verified flow chart around the base point.
#[pyclass(module = "tflpi_py")]
struct Chart {
    inner: ChartResult,
}

#[pymethods]
impl Chart {
    #[getter]
    fn radius(&self) -> f64 {
        self.inner.radius
    }

    fn forward(&self, s: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&s).map_err(py_err)
    }

    fn invert(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.invert(&x).map_err(py_err)
    }

    fn transverse_output(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.lambda(&x).map_err(py_err)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let v: Value = self.inner.to_json().map_err(py_err)?;
        to_py(py, &v)
    }
}

fn table(vars: &[String]) -> PyResult<VarTable> {
    VarTable::new(vars).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn field(components: &[String], vars: &VarTable) -> PyResult<VectorField> {
    components
        .iter()
        .map(|c| parse(c, vars).map_err(|e| PyValueError::new_err(format!("`{c}`: {e}"))))
        .collect::<PyResult<Vec<_>>>()
        .map(VectorField::new)
}

/// Symbolic bracket `[a, b]` of fields given as component strings.
#[pyfunction]
fn lie_bracket(a: Vec<String>, b: Vec<String>, vars: Vec<String>) -> PyResult<Vec<String>> {
    let v = table(&vars)?;
    let (fa, fb) = (field(&a, &v)?, field(&b, &v)?);
    if fa.dim() != v.len() || fb.dim() != v.len() {
        return Err(PyValueError::new_err("fields need one component per variable"));
    }
    Ok(liegeom::lie_bracket(&fa, &fb).to_text(&v))
}

/// Symbolic Lie derivative of a scalar along a field.
#[pyfunction]
fn lie_derivative(expr: &str, v: Vec<String>, vars: Vec<String>) -> PyResult<String> {
    let t = table(&vars)?;
    let e = parse(expr, &t).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(liegeom::lie_derivative(&e, &field(&v, &t)?).to_text(&t))
}

#[pyfunction]
fn evaluate(expr: &str, vars: Vec<String>, point: Vec<f64>) -> PyResult<f64> {
    let t = table(&vars)?;
    if point.len() != t.len() {
        return Err(PyValueError::new_err("point needs one value per variable"));
    }
    let e = parse(expr, &t).map_err(|e| PyValueError::new_err(e.to_string()))?;
    e.eval(&point).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn tflpi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<Chart>()?;
    m.add_function(wrap_pyfunction!(lie_bracket, m)?)?;
    m.add_function(wrap_pyfunction!(lie_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}

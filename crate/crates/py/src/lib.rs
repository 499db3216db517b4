//! Python bindings for phasenet.
//!
//! Fields cross the boundary as lists of Python `complex`; structured reports
//! (Fisher summaries, sweep tables) arrive as plain dicts.

use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use phasenet::estimate::{holographic_estimate, OptimizerConfig};
use phasenet::harness::ExperimentConfig;
use phasenet::{ComplexField, Error, Gauge, MeasurementDesign};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::OptimizationFailure(_) | Error::UnreliablePhase { .. } | Error::SizeGuard { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn field(values: Vec<Complex64>) -> PyResult<ComplexField> {
    ComplexField::new(values).map_err(to_py)
}

/// Hands a serializable value to Python through `json.loads`.
fn to_pyobject<'py, T: serde::Serialize + ?Sized>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A measurement design `y = rho + A x`.
#[pyclass(name = "Design", module = "phasenet_py", frozen)]
struct PyDesign {
    inner: MeasurementDesign,
}

#[pymethods]
impl PyDesign {
    /// Random group design with `L` modes per group and `Q` outputs.
    #[staticmethod]
    #[pyo3(signature = (n, l, q, seed=0))]
    fn random(n: usize, l: usize, q: usize, seed: u64) -> PyResult<Self> {
        phasenet::random_group_design(n, l, q, seed)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    /// Four-phase holography with reference amplitude `rho`.
    #[staticmethod]
    fn holographic(n: usize, rho: f64) -> PyResult<Self> {
        phasenet::holographic_design(n, rho)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        MeasurementDesign::from_json(text)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.inner.n_modes()
    }

    #[getter]
    fn m_rows(&self) -> usize {
        self.inner.m_rows()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner.kind() {
            phasenet::DesignKind::Group => "group",
            phasenet::DesignKind::Holographic => "holographic",
        }
    }

    #[getter]
    fn groups(&self) -> Vec<Vec<usize>> {
        self.inner.groups().to_vec()
    }

    fn degrees(&self) -> Vec<usize> {
        self.inner.degrees()
    }

    fn is_connected(&self) -> bool {
        self.inner.is_connected()
    }

    fn orthonormality_error(&self) -> f64 {
        self.inner.orthonormality_error()
    }

    /// `rho + A x`.
    fn apply(&self, x: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        if x.len() != self.inner.n_modes() {
            return Err(PyValueError::new_err("field length does not match the design"));
        }
        Ok(self.inner.apply(&x))
    }

    fn __repr__(&self) -> String {
        format!(
            "Design(kind={}, n_modes={}, m_rows={})",
            self.kind(),
            self.inner.n_modes(),
            self.inner.m_rows()
        )
    }
}

/// Circular complex Gaussian field with `photons_per_mode` mean intensity.
#[pyfunction]
#[pyo3(signature = (n, photons_per_mode=1e4, seed=0))]
fn random_field(n: usize, photons_per_mode: f64, seed: u64) -> PyResult<Vec<Complex64>> {
    phasenet::random_field(n, photons_per_mode, seed)
        .map(ComplexField::into_values)
        .map_err(to_py)
}

#[pyfunction]
fn intensities(design: &PyDesign, x: Vec<Complex64>) -> PyResult<Vec<f64>> {
    phasenet::intensities(&design.inner, &field(x)?).map_err(to_py)
}

/// Independent Poisson counts for the given rates.
#[pyfunction]
#[pyo3(signature = (intensity, seed=0))]
fn sample_counts(intensity: Vec<f64>, seed: u64) -> PyResult<Vec<u64>> {
    phasenet::sample_counts(&intensity, seed)
        .map(|r| r.counts)
        .map_err(to_py)
}

/// Maximum-likelihood reconstruction. `config` is an optional dict of
/// optimizer settings; returns a dict with the field and optimizer stats.
#[pyfunction]
#[pyo3(signature = (design, counts, seed=0, config=None))]
fn reconstruct<'py>(
    py: Python<'py>,
    design: &PyDesign,
    counts: Vec<f64>,
    seed: u64,
    config: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg: OptimizerConfig = match config {
        Some(d) => {
            let text: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
            serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?
        }
        None => OptimizerConfig::default(),
    };
    let rec = py
        .detach(|| phasenet::reconstruct(&design.inner, &counts, &cfg, seed))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("field", rec.field.values().to_vec())?;
    out.set_item("final_loss", rec.final_loss)?;
    out.set_item("iterations", rec.iterations)?;
    out.set_item("restart", rec.restart)?;
    out.set_item("trace", rec.trace)?;
    Ok(out)
}

/// Linear estimator for holographic designs.
#[pyfunction]
fn holographic_reconstruct(design: &PyDesign, counts: Vec<f64>) -> PyResult<Vec<Complex64>> {
    holographic_estimate(&design.inner, &counts)
        .map(ComplexField::into_values)
        .map_err(to_py)
}

/// Per-mode squared error, after optimal global-phase alignment by default.
#[pyfunction]
#[pyo3(signature = (estimate, truth, aligned=true))]
fn mse(estimate: Vec<Complex64>, truth: Vec<Complex64>, aligned: bool) -> PyResult<f64> {
    let gauge = if aligned { Gauge::Aligned } else { Gauge::Fixed };
    phasenet::mse(&field(estimate)?, &field(truth)?, gauge)
        .map(|r| r.mse_per_mode)
        .map_err(to_py)
}

/// Rotates `estimate` onto `truth`; returns `(aligned, phase)`.
#[pyfunction]
fn gauge_align(estimate: Vec<Complex64>, truth: Vec<Complex64>) -> PyResult<(Vec<Complex64>, f64)> {
    let a = phasenet::gauge_align(&field(estimate)?, &field(truth)?).map_err(to_py)?;
    Ok((a.aligned.into_values(), a.phase))
}

/// Fisher information summary (traces, eigenvalue range, C statistics).
#[pyfunction]
fn fisher_summary<'py>(py: Python<'py>, design: &PyDesign, x: Vec<Complex64>) -> PyResult<Bound<'py, PyAny>> {
    let x = field(x)?;
    let bundle = py
        .detach(|| phasenet::fisher(&design.inner, &x))
        .map_err(to_py)?;
    to_pyobject(py, &bundle.summary())
}

/// Runs a sweep described by a TOML document; returns one dict per row.
#[pyfunction]
fn run_sweep<'py>(py: Python<'py>, config_toml: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(to_py)?;
    let rows = py.detach(|| phasenet::run_sweep(&cfg)).map_err(to_py)?;
    to_pyobject(py, &rows)
}

#[pyfunction]
fn run_multiscale<'py>(py: Python<'py>, config_toml: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(to_py)?;
    let rows = py.detach(|| phasenet::run_multiscale(&cfg)).map_err(to_py)?;
    to_pyobject(py, &rows)
}

#[pymodule]
fn phasenet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDesign>()?;
    m.add_function(wrap_pyfunction!(random_field, m)?)?;
    m.add_function(wrap_pyfunction!(intensities, m)?)?;
    m.add_function(wrap_pyfunction!(sample_counts, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(holographic_reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(gauge_align, m)?)?;
    m.add_function(wrap_pyfunction!(fisher_summary, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_multiscale, m)?)?;
    Ok(())
}

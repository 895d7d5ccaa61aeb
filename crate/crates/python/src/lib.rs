//! Python bindings.
//!
//! Exposes datasets, compressors, target specifications, single-dataset and
//! series tuning, the ratio sweep, the quality metrics and the bare
//! optimizer (with a Python objective). Arrays cross the boundary as flat
//! sequences of floats in row-major order; any sequence works, including
//! NumPy arrays.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use ratiotune::compressor::{CompressedBuffer, CompressorHandle, Registry};
use ratiotune::metrics;
use ratiotune::optimizer::find_min_global_with_cutoff;
use ratiotune::orchestrator::{oracle_sweep, run_field_series, tune_dataset};
use ratiotune::synthetic;
use ratiotune::{Dataset, ElementKind, FieldSeries, TargetSpec, TuneResult};

create_exception!(ratiotune_py, RatiotuneError, PyException);

fn err(e: ratiotune::Error) -> PyErr {
    RatiotuneError::new_err(e.to_string())
}

fn kind(dtype: &str) -> PyResult<ElementKind> {
    dtype
        .parse()
        .map_err(|_| RatiotuneError::new_err(format!("unknown dtype `{dtype}` (use f32 or f64)")))
}

/// A named, time-stamped n-dimensional array.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (values, shape, dtype = "f32", field = "data", step = 0))]
    fn new(values: Vec<f64>, shape: Vec<usize>, dtype: &str, field: &str, step: u64) -> PyResult<Self> {
        let inner = Dataset::from_values(shape, kind(dtype)?, values)
            .map_err(err)?
            .with_identity(field, step);
        Ok(PyDataset { inner })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn dtype(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn field(&self) -> &str {
        self.inner.field_name()
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.time_step()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(field={:?}, step={}, shape={:?}, dtype={})",
            self.inner.field_name(),
            self.inner.time_step(),
            self.inner.shape(),
            self.inner.kind()
        )
    }
}

/// A codec from the built-in registry (`pq`, `bt`, `identity`, `external`).
#[pyclass(name = "Compressor", frozen)]
struct PyCompressor {
    inner: CompressorHandle,
}

#[pymethods]
impl PyCompressor {
    #[new]
    #[pyo3(signature = (name, params = None))]
    fn new(name: &str, params: Option<BTreeMap<String, String>>) -> PyResult<Self> {
        let inner = Registry::builtin()
            .create(name, &params.unwrap_or_default())
            .map_err(err)?;
        Ok(PyCompressor { inner })
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    /// Compressor calls made through this handle so far.
    #[getter]
    fn calls(&self) -> u64 {
        self.inner.stats().calls()
    }

    fn min_bound(&self, dtype: &str) -> PyResult<f64> {
        Ok(self.inner.min_bound(kind(dtype)?))
    }

    /// Original bytes divided by compressed bytes at `bound`.
    fn eval_ratio(&self, py: Python<'_>, data: &PyDataset, bound: f64) -> PyResult<f64> {
        py.detach(|| self.inner.eval_ratio(&data.inner, bound)).map_err(err)
    }

    /// Self-describing container bytes.
    fn compress<'py>(&self, py: Python<'py>, data: &PyDataset, bound: f64) -> PyResult<Bound<'py, PyBytes>> {
        let buf = py.detach(|| self.inner.compress(&data.inner, bound)).map_err(err)?;
        Ok(PyBytes::new(py, &buf.to_container()))
    }

    fn decompress(&self, py: Python<'_>, container: &[u8]) -> PyResult<PyDataset> {
        let buf = CompressedBuffer::from_container(container).map_err(err)?;
        let inner = py.detach(|| self.inner.decompress(&buf)).map_err(err)?;
        Ok(PyDataset { inner })
    }

    fn __repr__(&self) -> String {
        format!("Compressor({:?})", self.inner.name())
    }
}

/// Target ratio, tolerance and search settings.
#[pyclass(name = "TargetSpec", frozen)]
struct PyTargetSpec {
    inner: TargetSpec,
}

#[pymethods]
impl PyTargetSpec {
    #[new]
    #[pyo3(signature = (
        rho_target,
        max_error_bound,
        epsilon = 0.1,
        regions = TargetSpec::DEFAULT_REGIONS,
        overlap = TargetSpec::DEFAULT_OVERLAP,
        max_iters = TargetSpec::DEFAULT_MAX_ITERATIONS,
        seed = 0,
    ))]
    fn new(
        rho_target: f64,
        max_error_bound: f64,
        epsilon: f64,
        regions: usize,
        overlap: f64,
        max_iters: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = TargetSpec::new(rho_target, epsilon, max_error_bound)
            .and_then(|s| s.with_regions(regions))
            .and_then(|s| s.with_overlap(overlap))
            .and_then(|s| s.with_max_iterations(max_iters))
            .map_err(err)?
            .with_seed(seed);
        Ok(PyTargetSpec { inner })
    }

    #[getter]
    fn rho_target(&self) -> f64 {
        self.inner.rho_target()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    #[getter]
    fn max_error_bound(&self) -> f64 {
        self.inner.max_error_bound()
    }

    fn accepts(&self, ratio: f64) -> bool {
        self.inner.accepts(ratio)
    }

    fn __repr__(&self) -> String {
        format!(
            "TargetSpec(rho_target={}, epsilon={}, max_error_bound={})",
            self.inner.rho_target(),
            self.inner.epsilon(),
            self.inner.max_error_bound()
        )
    }
}

/// Outcome of tuning a dataset or series.
#[pyclass(name = "TuneResult", frozen)]
struct PyTuneResult {
    inner: TuneResult,
}

#[pymethods]
impl PyTuneResult {
    #[getter]
    fn field(&self) -> &str {
        &self.inner.field_name
    }

    #[getter]
    fn error_bound(&self) -> f64 {
        self.inner.error_bound
    }

    #[getter]
    fn rho_achieved(&self) -> f64 {
        self.inner.rho_achieved
    }

    #[getter]
    fn feasible(&self) -> bool {
        self.inner.feasible
    }

    #[getter]
    fn compressor_calls(&self) -> u64 {
        self.inner.compressor_calls
    }

    #[getter]
    fn retrain_steps(&self) -> Vec<u64> {
        self.inner.retrain_steps()
    }

    /// Per-step records and search traces as a JSON document.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| RatiotuneError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "TuneResult(field={:?}, error_bound={}, rho_achieved={}, feasible={})",
            self.inner.field_name, self.inner.error_bound, self.inner.rho_achieved, self.inner.feasible
        )
    }
}

/// Finds the error bound meeting `spec` for one dataset.
#[pyfunction]
fn tune(py: Python<'_>, compressor: &PyCompressor, data: &PyDataset, spec: &PyTargetSpec) -> PyResult<PyTuneResult> {
    let inner = py
        .detach(|| tune_dataset(&compressor.inner, &data.inner, &spec.inner))
        .map_err(err)?;
    Ok(PyTuneResult { inner })
}

/// Tunes consecutive time steps, reusing each bound while it still fits.
#[pyfunction]
fn tune_series(
    py: Python<'_>,
    compressor: &PyCompressor,
    steps: Vec<PyRef<'_, PyDataset>>,
    spec: &PyTargetSpec,
) -> PyResult<PyTuneResult> {
    let steps: Vec<Dataset> = steps.iter().map(|d| d.inner.clone()).collect();
    let name = steps.first().map_or("data", |d| d.field_name()).to_string();
    let series = FieldSeries::new(name, steps).map_err(err)?;
    let inner = py
        .detach(|| run_field_series(&compressor.inner, &series, &spec.inner))
        .map_err(err)?;
    Ok(PyTuneResult { inner })
}

/// Ratio at every bound in `bounds`.
#[pyfunction]
fn sweep(py: Python<'_>, compressor: &PyCompressor, data: &PyDataset, bounds: Vec<f64>) -> PyResult<Vec<f64>> {
    py.detach(|| oracle_sweep(&compressor.inner, &data.inner, &bounds))
        .into_iter()
        .map(|r| r.map_err(err))
        .collect()
}

/// Minimizes a Python callable over `[lower, upper]`; returns
/// `(x, value, evaluations)`.
#[pyfunction]
#[pyo3(signature = (f, lower, upper, cutoff = f64::NEG_INFINITY, max_iters = 100, seed = 0))]
fn minimize(
    f: Bound<'_, PyAny>,
    lower: f64,
    upper: f64,
    cutoff: f64,
    max_iters: usize,
    seed: u64,
) -> PyResult<(f64, f64, usize)> {
    let out = find_min_global_with_cutoff(
        |x| f.call1((x,))?.extract::<f64>(),
        lower,
        upper,
        cutoff,
        max_iters,
        seed,
    );
    match out {
        Ok(o) => Ok((o.x, o.value, o.trace.evaluations.len())),
        Err(ratiotune::optimizer::SearchError::Objective { source, .. }) => Err(source),
        Err(e) => Err(RatiotuneError::new_err(e.to_string())),
    }
}

#[pyfunction]
fn psnr(original: &PyDataset, decoded: &PyDataset) -> PyResult<f64> {
    metrics::psnr(&original.inner, &decoded.inner).map_err(err)
}

#[pyfunction]
fn rmse(original: &PyDataset, decoded: &PyDataset) -> PyResult<f64> {
    metrics::rmse(&original.inner, &decoded.inner).map_err(err)
}

#[pyfunction]
fn max_abs_error(original: &PyDataset, decoded: &PyDataset) -> PyResult<f64> {
    metrics::max_abs_error(&original.inner, &decoded.inner).map_err(err)
}

/// SSIM of a representative 2-D slice; `None` for data without one.
#[pyfunction]
fn ssim(original: &PyDataset, decoded: &PyDataset) -> PyResult<Option<f64>> {
    metrics::dataset_ssim(&original.inner, &decoded.inner).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (original, decoded, lag = 1))]
fn acf_error(original: &PyDataset, decoded: &PyDataset, lag: usize) -> PyResult<f64> {
    metrics::acf_error(&original.inner, &decoded.inner, lag).map_err(err)
}

/// Seeded smooth test field.
#[pyfunction]
fn smooth_field(shape: Vec<usize>, seed: u64) -> PyDataset {
    PyDataset {
        inner: synthetic::smooth_field(&shape, seed),
    }
}

/// Seeded smooth field with added noise.
#[pyfunction]
fn noisy_field(shape: Vec<usize>, seed: u64) -> PyDataset {
    PyDataset {
        inner: synthetic::noisy_field(&shape, seed),
    }
}

#[pymodule]
fn ratiotune_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RatiotuneError", m.py().get_type::<RatiotuneError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyCompressor>()?;
    m.add_class::<PyTargetSpec>()?;
    m.add_class::<PyTuneResult>()?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    m.add_function(wrap_pyfunction!(tune_series, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(minimize, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(max_abs_error, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(acf_error, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_field, m)?)?;
    m.add_function(wrap_pyfunction!(noisy_field, m)?)?;
    Ok(())
}

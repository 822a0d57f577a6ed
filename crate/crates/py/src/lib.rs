//! Python bindings. Volumes cross the boundary as flat i1-fastest lists
//! plus dims; parameter structs cross as dicts with the same field names as
//! the JSON config.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

use seg::config::PipelineConfig;
use seg::error::Error;
use seg::lowrank::{DenseTensor3, LowRankConfig, TuckerFactors, TuckerRank};
use seg::matting::{generate_trimap, BinaryMask2D, MatteParams};
use seg::metrics::{ClassWeights, LabelVolume, ProbVolume};
use seg::segmenter::{PhantomSpec, StubParams};

create_exception!(kneeseg, KneesegError, PyException);
create_exception!(kneeseg, FormatError, KneesegError);
create_exception!(kneeseg, NumericError, KneesegError);

fn root_cause(e: &Error) -> &Error {
    match e {
        Error::Stage { source, .. } => root_cause(source),
        other => other,
    }
}

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match root_cause(&e) {
        Error::Usage(_) => PyValueError::new_err(msg),
        Error::Format { .. } | Error::Io { .. } => FormatError::new_err(msg),
        _ => NumericError::new_err(msg),
    }
}

fn from_dict<T: DeserializeOwned + Default>(py: Python<'_>, obj: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let Some(obj) = obj else {
        return Ok(T::default());
    };
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).expect("serialisable");
    py.import("json")?.call_method1("loads", (text,))
}

type Dims = (usize, usize, usize);

/// Dense 3D intensity volume.
#[pyclass(name = "Volume", module = "kneeseg")]
struct PyVolume(DenseTensor3);

#[pymethods]
impl PyVolume {
    #[new]
    fn new(dims: Dims, data: Vec<f64>) -> PyResult<Self> {
        DenseTensor3::new(dims, data).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        seg::kvol::read_volume(&path).map(Self).map_err(to_py)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        seg::kvol::write_volume(&self.0, &path).map_err(to_py)
    }

    #[getter]
    fn dims(&self) -> Dims {
        self.0.dims()
    }

    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn get(&self, i1: usize, i2: usize, i3: usize) -> PyResult<f64> {
        let (a, b, c) = self.0.dims();
        if i1 >= a || i2 >= b || i3 >= c {
            return Err(PyValueError::new_err("index out of bounds"));
        }
        Ok(self.0.get(i1, i2, i3))
    }

    fn frobenius_norm(&self) -> f64 {
        self.0.frobenius_norm()
    }

    fn relative_error(&self, other: &PyVolume) -> PyResult<f64> {
        if self.0.dims() != other.0.dims() {
            return Err(PyValueError::new_err("dims differ"));
        }
        Ok(self.0.relative_error(&other.0))
    }

    fn __repr__(&self) -> String {
        format!("Volume(dims={:?})", self.0.dims())
    }
}

/// Integer label volume; 0 is background.
#[pyclass(name = "Labels", module = "kneeseg")]
struct PyLabels(LabelVolume);

#[pymethods]
impl PyLabels {
    #[new]
    fn new(dims: Dims, class_count: usize, labels: Vec<u8>) -> PyResult<Self> {
        LabelVolume::new(dims, class_count, labels).map(Self).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (path, class_count=None))]
    fn read(path: PathBuf, class_count: Option<usize>) -> PyResult<Self> {
        seg::kvol::read_labels(&path, class_count).map(Self).map_err(to_py)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        seg::kvol::write_labels(&self.0, &path).map_err(to_py)
    }

    #[getter]
    fn dims(&self) -> Dims {
        self.0.dims()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.0.class_count()
    }

    fn labels(&self) -> Vec<u32> {
        self.0.labels().iter().map(|&l| l.into()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Labels(dims={:?}, classes={})", self.0.dims(), self.0.class_count())
    }
}

/// Per-voxel class probabilities, class-slowest.
#[pyclass(name = "ProbMap", module = "kneeseg")]
struct PyProbMap(ProbVolume);

#[pymethods]
impl PyProbMap {
    #[new]
    fn new(dims: Dims, class_count: usize, data: Vec<f64>) -> PyResult<Self> {
        ProbVolume::new(dims, class_count, data).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        seg::kvol::read_probmap(&path).map(Self).map_err(to_py)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        seg::kvol::write_probmap(&self.0, &path).map_err(to_py)
    }

    #[getter]
    fn dims(&self) -> Dims {
        self.0.dims()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.0.class_count()
    }

    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn argmax(&self) -> PyLabels {
        PyLabels(self.0.argmax())
    }
}

/// Tucker model: core tensor plus one orthonormal factor per mode.
#[pyclass(name = "Tucker", module = "kneeseg")]
struct PyTucker(TuckerFactors);

#[pymethods]
impl PyTucker {
    #[getter]
    fn core(&self) -> PyVolume {
        PyVolume(self.0.core.clone())
    }

    #[getter]
    fn ranks(&self) -> Dims {
        let r = self.0.ranks();
        (r.0, r.1, r.2)
    }

    /// Factor matrix of `mode` (1, 2 or 3) as a list of rows.
    fn factor(&self, mode: usize) -> PyResult<Vec<Vec<f64>>> {
        if !(1..=3).contains(&mode) {
            return Err(PyValueError::new_err("mode must be 1, 2 or 3"));
        }
        let m = &self.0.factors[mode - 1];
        Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    fn orthonormality_defect(&self) -> f64 {
        self.0.orthonormality_defect()
    }

    fn reconstruct(&self) -> PyResult<PyVolume> {
        self.0.reconstruct().map(PyVolume).map_err(to_py)
    }
}

#[pyfunction]
fn hosvd(volume: &PyVolume, ranks: Dims) -> PyResult<PyTucker> {
    seg::lowrank::hosvd(&volume.0, TuckerRank(ranks.0, ranks.1, ranks.2))
        .map(PyTucker)
        .map_err(to_py)
}

/// Returns `(tucker, fit_history)`.
#[pyfunction]
#[pyo3(signature = (volume, ranks, tol=1e-7, max_iter=50))]
fn hooi(volume: &PyVolume, ranks: Dims, tol: f64, max_iter: usize) -> PyResult<(PyTucker, Vec<f64>)> {
    let cfg = LowRankConfig {
        hooi_tol: tol,
        hooi_max_iter: max_iter,
        ..LowRankConfig::default()
    };
    let out = seg::lowrank::hooi(&volume.0, TuckerRank(ranks.0, ranks.1, ranks.2), &cfg).map_err(to_py)?;
    Ok((PyTucker(out.factors), out.fit_history))
}

#[pyfunction]
#[pyo3(signature = (volume, block_depth=10, slice_rank=3))]
fn blockwise_lowrank(volume: &PyVolume, block_depth: usize, slice_rank: usize) -> PyResult<PyVolume> {
    let cfg = LowRankConfig {
        block_depth,
        slice_rank,
        ..LowRankConfig::default()
    };
    seg::lowrank::blockwise_lowrank(&volume.0, &cfg)
        .map(PyVolume)
        .map_err(to_py)
}

/// Synthetic volume and ground truth. `spec` overrides default fields.
#[pyfunction]
#[pyo3(signature = (spec=None))]
fn make_phantom(py: Python<'_>, spec: Option<&Bound<'_, PyDict>>) -> PyResult<(PyVolume, PyLabels)> {
    let spec: PhantomSpec = from_dict(py, spec)?;
    let (v, l) = seg::segmenter::make_phantom(&spec).map_err(to_py)?;
    Ok((PyVolume(v), PyLabels(l)))
}

#[pyfunction]
#[pyo3(signature = (volume, params=None))]
fn stub_segment(py: Python<'_>, volume: &PyVolume, params: Option<&Bound<'_, PyDict>>) -> PyResult<PyProbMap> {
    let params: StubParams = from_dict(py, params)?;
    seg::segmenter::stub_segment(&volume.0, &params)
        .map(PyProbMap)
        .map_err(to_py)
}

/// Trimap codes (0 background, 1 unknown, 2 foreground) from two masks.
#[pyfunction]
fn trimap(width: usize, height: usize, source: Vec<bool>, lowrank: Vec<bool>) -> PyResult<Vec<u32>> {
    let t = generate_trimap(
        &BinaryMask2D::new(width, height, source).map_err(to_py)?,
        &BinaryMask2D::new(width, height, lowrank).map_err(to_py)?,
    )
    .map_err(to_py)?;
    Ok(t.labels().iter().map(|l| l.code().into()).collect())
}

/// Mattes every slice and returns the fused labels.
#[pyfunction]
#[pyo3(signature = (volume, probs_source, probs_lowrank, params=None))]
fn matte(
    py: Python<'_>,
    volume: &PyVolume,
    probs_source: &PyProbMap,
    probs_lowrank: &PyProbMap,
    params: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyLabels> {
    let params: MatteParams = from_dict(py, params)?;
    let slices = seg::pipeline::matte_volume(&volume.0, &probs_source.0, &probs_lowrank.0, &params)
        .map_err(to_py)?;
    seg::pipeline::assemble_labels(volume.0.dims(), probs_source.0.class_count(), &slices)
        .map(PyLabels)
        .map_err(to_py)
}

/// Per-class and mean overlap metrics as a dict.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, pred: &PyLabels, truth: &PyLabels) -> PyResult<Bound<'py, PyAny>> {
    let report = seg::metrics::evaluate(&pred.0, &truth.0).map_err(to_py)?;
    to_dict(py, &report)
}

#[pyfunction]
#[pyo3(signature = (probs, labels, weights=None))]
fn wce_loss(probs: &PyProbMap, labels: &PyLabels, weights: Option<Vec<f64>>) -> PyResult<f64> {
    let weights = match weights {
        Some(w) => ClassWeights::new(w).map_err(to_py)?,
        None => ClassWeights::uniform(probs.0.class_count()),
    };
    seg::metrics::wce_loss(&probs.0, &labels.0, &weights).map_err(to_py)
}

#[pyfunction]
fn default_config<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
    to_dict(py, &PipelineConfig::default())
}

/// Runs the full pipeline; returns the run summary as a dict.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn run_pipeline<'py>(py: Python<'py>, config: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: PipelineConfig = from_dict(py, config)?;
    let out = py.detach(|| seg::pipeline::run_pipeline(&cfg)).map_err(to_py)?;
    let summary = std::fs::read_to_string(out.run_dir.join(seg::pipeline::SUMMARY_JSON))
        .map_err(|e| FormatError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (summary,))
}

#[pymodule]
fn kneeseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVolume>()?;
    m.add_class::<PyLabels>()?;
    m.add_class::<PyProbMap>()?;
    m.add_class::<PyTucker>()?;
    m.add_function(wrap_pyfunction!(hosvd, m)?)?;
    m.add_function(wrap_pyfunction!(hooi, m)?)?;
    m.add_function(wrap_pyfunction!(blockwise_lowrank, m)?)?;
    m.add_function(wrap_pyfunction!(make_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(stub_segment, m)?)?;
    m.add_function(wrap_pyfunction!(trimap, m)?)?;
    m.add_function(wrap_pyfunction!(matte, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(wce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("KneesegError", m.py().get_type::<KneesegError>())?;
    m.add("FormatError", m.py().get_type::<FormatError>())?;
    m.add("NumericError", m.py().get_type::<NumericError>())?;
    Ok(())
}

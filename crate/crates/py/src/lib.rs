//! Python bindings over `perceptkd-core`.
//!
//! Matrices cross the boundary as lists of row lists. Core errors surface as
//! `ValueError`, except I/O and checkpoint failures, which raise `OSError`.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use perceptkd_core::calibration::{CalibrationReport, PredictionSet};
use perceptkd_core::data::{self, generate_mixture, Dataset, MixtureSpec, Schema, Standardizer};
use perceptkd_core::losses::{self, DistillMode, LossValue};
use perceptkd_core::perception::{compute_class_stats, perceive as perceive_batch, GradMode};
use perceptkd_core::trainer::{self, EpochRecord, TrainConfig, TrainOutcome};
use perceptkd_core::{checkpoint, model, Error, Matrix, MlpParams, MlpSpec, RngState};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Checkpoint(_) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("matrix needs at least one row"));
    }
    Matrix::from_rows(&rows).map_err(py_err)
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

fn loss_tuple(v: LossValue) -> (f64, Vec<Vec<f64>>) {
    (v.value, to_rows(&v.grad))
}

/// Per-class batch means and variances of a logit batch.
#[pyfunction]
#[pyo3(signature = (logits, epsilon = 1e-5))]
fn class_stats(logits: Vec<Vec<f64>>, epsilon: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let stats = compute_class_stats(&to_matrix(logits)?, epsilon).map_err(py_err)?;
    Ok((stats.means, stats.vars))
}

/// Perception logits: each column standardized by its own batch statistics.
#[pyfunction]
#[pyo3(signature = (logits, epsilon = 1e-5))]
fn perceive(logits: Vec<Vec<f64>>, epsilon: f64) -> PyResult<Vec<Vec<f64>>> {
    let z = to_matrix(logits)?;
    let stats = compute_class_stats(&z, epsilon).map_err(py_err)?;
    Ok(to_rows(&perceive_batch(&z, &stats).map_err(py_err)?.h))
}

/// Returns `(value, gradient with respect to the student logits)`.
#[pyfunction]
#[pyo3(signature = (teacher, student, tau = 4.0, epsilon = 1e-5, grad_mode = "stop-gradient"))]
fn luminet_loss(
    teacher: Vec<Vec<f64>>,
    student: Vec<Vec<f64>>,
    tau: f64,
    epsilon: f64,
    grad_mode: &str,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let mode: GradMode = parse(grad_mode)?;
    let v = losses::luminet_loss(&to_matrix(teacher)?, &to_matrix(student)?, tau, epsilon, mode).map_err(py_err)?;
    Ok(loss_tuple(v))
}

#[pyfunction]
#[pyo3(signature = (teacher, student, tau = 4.0, tau_squared_scaling = false))]
fn classic_kd_loss(
    teacher: Vec<Vec<f64>>,
    student: Vec<Vec<f64>>,
    tau: f64,
    tau_squared_scaling: bool,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let v = losses::classic_kd_loss(&to_matrix(teacher)?, &to_matrix(student)?, tau, tau_squared_scaling)
        .map_err(py_err)?;
    Ok(loss_tuple(v))
}

#[pyfunction]
fn cross_entropy(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    Ok(loss_tuple(losses::cross_entropy(&to_matrix(logits)?, &labels).map_err(py_err)?))
}

fn report_dict<'py>(py: Python<'py>, r: &CalibrationReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("samples", r.samples)?;
    d.set_item("classes", r.classes)?;
    d.set_item("n_bins", r.n_bins)?;
    d.set_item("top1", r.top1)?;
    d.set_item("top5", r.top5)?;
    d.set_item("ece", r.ece)?;
    d.set_item("mce", r.mce)?;
    d.set_item("fpr95", r.fpr95)?;
    d.set_item("fpr95_skipped_classes", r.fpr95_skipped_classes.clone())?;
    d.set_item("mean_entropy", r.mean_entropy)?;
    d.set_item("mutual_info", r.mutual_info)?;
    d.set_item("instance_variance", r.instance_variance)?;
    let bins: Vec<(f64, f64, usize, f64, f64)> = r
        .bins
        .iter()
        .map(|b| (b.lower, b.upper, b.count, b.mean_confidence, b.accuracy))
        .collect();
    d.set_item("bins", bins)?;
    Ok(d)
}

/// Calibration and information metrics of class probabilities.
#[pyfunction]
#[pyo3(signature = (probs, labels, bins = 15))]
fn calibration_report<'py>(
    py: Python<'py>,
    probs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    bins: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let preds = PredictionSet::new(to_matrix(probs)?, labels).map_err(py_err)?;
    report_dict(py, &CalibrationReport::evaluate(&preds, bins).map_err(py_err)?)
}

/// Labeled feature matrix.
#[pyclass(name = "Dataset", module = "perceptkd", skip_from_py_object)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (features, labels, classes))]
    fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> PyResult<Self> {
        let inner = Dataset::new(to_matrix(features)?, labels, classes, "python").map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Gaussian mixture whose per-class variances span a factor of `kappa`.
    #[staticmethod]
    #[pyo3(signature = (classes = 10, dims = 16, per_class = 500, center_scale = 1.75, within_variance = 1.0, kappa = 10.0, seed = 0))]
    fn mixture(
        classes: usize,
        dims: usize,
        per_class: usize,
        center_scale: f64,
        within_variance: f64,
        kappa: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = MixtureSpec {
            classes,
            dims,
            samples_per_class: per_class,
            center_scale,
            within_variance,
            kappa,
            seed,
        };
        Ok(Self {
            inner: generate_mixture(&spec).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = data::load_delimited(path, Schema { dims: None, classes: None }).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        data::write_delimited(&self.inner, path).map_err(py_err)
    }

    /// Stratified train/val/test split.
    #[pyo3(signature = (fractions = (0.7, 0.15, 0.15), seed = 0))]
    fn split(&self, fractions: (f64, f64, f64), seed: u64) -> PyResult<(Self, Self, Self)> {
        let (a, b, c) = data::split(&self.inner, [fractions.0, fractions.1, fractions.2], seed).map_err(py_err)?;
        Ok((Self { inner: a }, Self { inner: b }, Self { inner: c }))
    }

    /// Standardizes `self` and `others` with statistics fit on `self`.
    fn standardize(&self, others: Vec<PyRef<'_, PyDataset>>) -> PyResult<Vec<Self>> {
        let s = Standardizer::fit(&self.inner).map_err(py_err)?;
        std::iter::once(&self.inner)
            .chain(others.iter().map(|o| &o.inner))
            .map(|d| Ok(Self { inner: s.apply(d).map_err(py_err)? }))
            .collect()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.features)
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes
    }

    #[getter]
    fn dims(&self) -> usize {
        self.inner.dims()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(samples={}, dims={}, classes={})", self.inner.len(), self.inner.dims(), self.inner.classes)
    }
}

/// ReLU multilayer perceptron parameters.
#[pyclass(name = "Mlp", module = "perceptkd", skip_from_py_object)]
struct PyMlp {
    inner: MlpParams,
}

#[pymethods]
impl PyMlp {
    /// He-initialized network with layer widths `[input, hidden..., classes]`.
    #[new]
    #[pyo3(signature = (widths, seed = 0))]
    fn new(widths: Vec<usize>, seed: u64) -> PyResult<Self> {
        let spec = MlpSpec::new(widths).map_err(py_err)?;
        Ok(Self {
            inner: model::init_params(&spec, &mut RngState::new(seed)),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.inner, path).map_err(py_err)
    }

    fn predict(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&model::predict(&self.inner, &to_matrix(inputs)?).map_err(py_err)?))
    }

    /// Calibration report of the network's softmax outputs on `data`.
    #[pyo3(signature = (data, bins = 15))]
    fn evaluate<'py>(&self, py: Python<'py>, data: &PyDataset, bins: usize) -> PyResult<Bound<'py, PyDict>> {
        let logits = model::predict(&self.inner, &data.inner.features).map_err(py_err)?;
        let preds = PredictionSet::from_logits(&logits, data.inner.labels.clone()).map_err(py_err)?;
        report_dict(py, &CalibrationReport::evaluate(&preds, bins).map_err(py_err)?)
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.inner.spec().widths().to_vec()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn flatten(&self) -> Vec<f64> {
        self.inner.flatten()
    }

    fn __repr__(&self) -> String {
        format!("Mlp(widths={:?})", self.inner.spec().widths())
    }
}

/// Result of a training or distillation run.
#[pyclass(name = "TrainResult", module = "perceptkd")]
struct PyTrainResult {
    #[pyo3(get)]
    best: Py<PyMlp>,
    #[pyo3(get)]
    last: Py<PyMlp>,
    #[pyo3(get)]
    best_epoch: usize,
    records: Vec<EpochRecord>,
}

#[pymethods]
impl PyTrainResult {
    /// One dict per epoch.
    #[getter]
    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let list = PyList::empty(py);
        for r in &self.records {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("lr", r.lr)?;
            d.set_item("ce_loss", r.ce_loss)?;
            d.set_item("distill_loss", r.distill_loss)?;
            d.set_item("total_loss", r.total_loss)?;
            d.set_item("train_accuracy", r.train_accuracy)?;
            d.set_item("val_accuracy", r.val_accuracy)?;
            d.set_item("grad_norm", r.grad_norm)?;
            d.set_item("grad_variance", r.grad_variance)?;
            list.append(d)?;
        }
        Ok(list)
    }
}

fn train_config(options: Option<&Bound<'_, PyDict>>) -> PyResult<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(options) = options {
        for (key, value) in options.iter() {
            let key: String = key.extract()?;
            let value = match value.extract::<bool>() {
                Ok(b) => b.to_string(),
                Err(_) => value.str()?.to_string(),
            };
            if !config.apply_kv(&key, &value).map_err(py_err)? {
                return Err(PyValueError::new_err(format!("unknown training option '{key}'")));
            }
        }
    }
    Ok(config)
}

fn wrap_outcome(py: Python<'_>, outcome: TrainOutcome) -> PyResult<PyTrainResult> {
    Ok(PyTrainResult {
        best: Py::new(py, PyMlp { inner: outcome.best })?,
        last: Py::new(py, PyMlp { inner: outcome.last })?,
        best_epoch: outcome.best_epoch,
        records: outcome.records,
    })
}

/// Trains a network from scratch with cross-entropy. Keyword options use the
/// same names as the command-line settings (`epochs`, `batch_size`, `lr`, ...).
#[pyfunction]
#[pyo3(signature = (widths, train, val, **options))]
fn train_teacher(
    py: Python<'_>,
    widths: Vec<usize>,
    train: &PyDataset,
    val: &PyDataset,
    options: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyTrainResult> {
    let spec = MlpSpec::new(widths).map_err(py_err)?;
    let mut config = train_config(options)?;
    config.mode = DistillMode::None;
    let outcome = trainer::train_teacher(&spec, &train.inner, &val.inner, &config).map_err(py_err)?;
    wrap_outcome(py, outcome)
}

/// Trains a student against a frozen teacher; `mode` is `none`, `kd` or `luminet`.
#[pyfunction]
#[pyo3(signature = (teacher, widths, train, val, **options))]
fn distill(
    py: Python<'_>,
    teacher: &PyMlp,
    widths: Vec<usize>,
    train: &PyDataset,
    val: &PyDataset,
    options: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyTrainResult> {
    let spec = MlpSpec::new(widths).map_err(py_err)?;
    let config = train_config(options)?;
    let outcome = trainer::distill(&teacher.inner, &spec, &train.inner, &val.inner, &config).map_err(py_err)?;
    wrap_outcome(py, outcome)
}

#[pymodule]
fn perceptkd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyMlp>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(class_stats, m)?)?;
    m.add_function(wrap_pyfunction!(perceive, m)?)?;
    m.add_function(wrap_pyfunction!(luminet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(classic_kd_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(calibration_report, m)?)?;
    m.add_function(wrap_pyfunction!(train_teacher, m)?)?;
    m.add_function(wrap_pyfunction!(distill, m)?)?;
    Ok(())
}

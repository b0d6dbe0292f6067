//! Python bindings: config handling, single-arm runs, ablations, metrics,
//! snapshot stores and checkpoints.

use std::path::PathBuf;

use ecdctr_core::embstore::{Side, SnapshotStore, DEFAULT_RETENTION};
use ecdctr_core::eval;
use ecdctr_core::models::{self, CompleteModel};
use ecdctr_core::pipeline::{self, expand_arms, Pipeline, SimData};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn runtime(e: ecdctr_core::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn value(e: ecdctr_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn side(name: &str) -> PyResult<Side> {
    Side::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown side `{name}`")))
}

/// Pipeline configuration; keys and values as in the `key=value` config file.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: pipeline::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (text=None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => pipeline::RunConfig::from_text(t).map_err(value)?,
            None => pipeline::RunConfig::default(),
        };
        Ok(Self { inner })
    }

    fn set(&mut self, key: &str, value_text: &str) -> PyResult<()> {
        self.inner.set(key, value_text).map_err(value)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .get(key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown key `{key}`")))
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        pipeline::RunConfig::KEYS.to_vec()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(value)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(fingerprint={})", self.inner.fingerprint())
    }
}

/// Result of one arm on one seed.
#[pyclass(name = "RunResult", frozen, skip_from_py_object)]
struct PyRunResult {
    #[pyo3(get)]
    label: String,
    #[pyo3(get)]
    seed: u64,
    #[pyo3(get)]
    gauc: Option<f64>,
    #[pyo3(get)]
    auc: Option<f64>,
    #[pyo3(get)]
    event_log: String,
    #[pyo3(get)]
    warmup_completed: bool,
    #[pyo3(get)]
    report_csv: String,
}

/// Runs the configured variant on one seed; writes artifacts when `out` is given.
#[pyfunction]
#[pyo3(signature = (config, seed, out=None))]
fn run(py: Python<'_>, config: &PyRunConfig, seed: u64, out: Option<PathBuf>) -> PyResult<PyRunResult> {
    let c = config.inner.clone();
    let outcome = py
        .detach(move || {
            let data = SimData::generate(&c, seed)?;
            Pipeline::new(&c, &data, out, None)?.run(c.variant.as_str())
        })
        .map_err(runtime)?;
    let r = outcome.result();
    Ok(PyRunResult {
        label: outcome.label.clone(),
        seed,
        gauc: r.gauc,
        auc: r.auc,
        event_log: outcome.event_log(),
        warmup_completed: outcome.warmup_completed,
        report_csv: outcome.report.to_csv(),
    })
}

/// Runs arms (names, presets or `variant:key=value` specs) over the config's
/// seeds and returns the combined report CSV.
#[pyfunction]
#[pyo3(signature = (config, arms, out=None, jobs=1))]
fn ablate(py: Python<'_>, config: &PyRunConfig, arms: Vec<String>, out: Option<PathBuf>, jobs: usize) -> PyResult<String> {
    let arms = expand_arms(&arms).map_err(value)?;
    let c = config.inner.clone();
    let report = py
        .detach(move || pipeline::run_ablation(&c, &arms, out.as_deref(), jobs))
        .map_err(runtime)?;
    Ok(report.to_csv())
}

/// Area under the ROC curve; `None` when only one class is present.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    let pairs: Vec<(f64, u8)> = scores.into_iter().zip(labels).collect();
    Ok(eval::auc(&pairs))
}

/// Impression-weighted mean of per-user AUC over users with both classes.
#[pyfunction]
fn gauc(users: Vec<u32>, scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    if users.len() != scores.len() || scores.len() != labels.len() {
        return Err(PyValueError::new_err("users, scores and labels differ in length"));
    }
    eval::gauc(&eval::group_by_user(&users, &scores, &labels)).map_err(value)
}

/// Snapshot directory written by a run (`<run>/store`).
#[pyclass(name = "SnapshotStore", skip_from_py_object)]
struct PySnapshotStore {
    inner: SnapshotStore,
}

#[pymethods]
impl PySnapshotStore {
    #[staticmethod]
    #[pyo3(signature = (path, retention_k=DEFAULT_RETENTION))]
    fn load(path: PathBuf, retention_k: usize) -> PyResult<Self> {
        Ok(Self {
            inner: SnapshotStore::load_dir(&path, retention_k).map_err(runtime)?,
        })
    }

    fn month_tags(&self, side_name: &str) -> PyResult<Vec<u32>> {
        Ok(self.inner.month_tags(side(side_name)?))
    }

    /// Three-month history of `id` as three rows, oldest first.
    fn lookup_history(&self, side_name: &str, id: u64) -> PyResult<Vec<Vec<f64>>> {
        let m = self.inner.lookup_history(side(side_name)?, id).map_err(value)?;
        Ok((0..m.rows()).map(|r| m.row(r).to_vec()).collect())
    }

    /// Merged serving vectors for every id, using the checkpoint's attention.
    fn merge(&self, side_name: &str, checkpoint: &PyCheckpoint) -> PyResult<Vec<(u64, Vec<f64>)>> {
        let s = side(side_name)?;
        let slot = if s == Side::User { 0 } else { 1 };
        let table = self
            .inner
            .merge_tables(s, checkpoint.inner.attention_for(slot))
            .map_err(value)?;
        Ok(table.entries.into_iter().collect())
    }
}

/// A complete-model checkpoint.
#[pyclass(name = "Checkpoint", skip_from_py_object)]
struct PyCheckpoint {
    inner: CompleteModel,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: models::load_checkpoint(&path).map_err(runtime)?,
        })
    }

    /// `(name, shape)` for every stored tensor, in file order.
    fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        self.inner.tensors().into_iter().map(|t| (t.name, t.shape)).collect()
    }

    fn tensor(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner
            .tensors()
            .into_iter()
            .find(|t| t.name == name)
            .map(|t| t.data)
            .ok_or_else(|| PyValueError::new_err(format!("no tensor `{name}`")))
    }

    fn input_width(&self) -> usize {
        self.inner.config.input_width()
    }
}

#[pymodule]
fn ecdctr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PySnapshotStore>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(gauc, m)?)?;
    m.add("HISTORY_SLOTS", ecdctr_core::nncore::HISTORY_SLOTS)?;
    Ok(())
}

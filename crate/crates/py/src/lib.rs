//! Python bindings for the `fedmup` library.
//!
//! Build with `maturin develop` from `crates/py`, then `import fedmup`.

use std::path::PathBuf;

use fedmup as core;
use core::checkpoint::Checkpoint;
use core::dataset::{self, ClassLabel, NUM_CLASSES, NUM_FEATURES};
use core::fed::{self, RoundConfig, RoundReport};
use core::gate;
use core::metrics;
use core::model::{self, NetworkSpec, ParameterVector, TrainingConfig, Variant};
use core::ube::{
    self, AccessRecord, AccessRequest, AuthorizationSet, Intent, Parameter, SecurityThresholds, TimeWindow,
    UserHistory,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: core::Error) -> PyErr {
    match e {
        core::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn label(code: u8) -> PyResult<ClassLabel> {
    ClassLabel::from_code(code).ok_or_else(|| PyValueError::new_err(format!("class code {code} outside 1..=3")))
}

fn variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(to_py)
}

/// A labeled dataset of twelve-feature records.
#[pyclass(name = "Dataset", module = "fedmup")]
struct PyDataset {
    inner: dataset::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Synthetic class-conditional records.
    #[staticmethod]
    #[pyo3(signature = (n, seed=42, mix=[0.3, 0.5, 0.2]))]
    fn synthesize(n: usize, seed: u64, mix: [f64; NUM_CLASSES]) -> PyResult<Self> {
        Ok(Self {
            inner: dataset::synthesize(n, seed, mix).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: dataset::load_csv(path).map_err(to_py)?,
        })
    }

    /// Records given as `(features, class_code)` pairs with raw values.
    #[staticmethod]
    fn from_rows(rows: Vec<([f64; NUM_FEATURES], u8)>) -> PyResult<Self> {
        let records = rows
            .iter()
            .map(|(x, c)| dataset::FeatureRecord::from_features(x, label(*c)?).map_err(to_py))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self {
            inner: dataset::Dataset::from_records(&records),
        })
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        dataset::save_csv(path, &self.inner).map_err(to_py)
    }

    fn rows(&self) -> Vec<([f64; NUM_FEATURES], u8)> {
        self.inner
            .samples()
            .iter()
            .map(|s| (s.features, s.label.code()))
            .collect()
    }

    /// Counts for (malicious, non-malicious, unknown).
    fn class_counts(&self) -> [usize; NUM_CLASSES] {
        self.inner.class_counts()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(len={}, counts={:?})", self.inner.len(), self.inner.class_counts())
    }
}

/// Behaviour assessment of one request.
///
/// `history` holds `(data_id, category_id, timestamp, authorized, leaked)`
/// tuples in time order; `auth` holds `(category_id, data_id)` pairs.
#[pyfunction]
#[pyo3(signature = (user_id, data_id, category_id, timestamp, history, auth, window, thr_attack=0.5, thr_freq=0.3))]
#[allow(clippy::too_many_arguments)]
fn assess<'py>(
    py: Python<'py>,
    user_id: String,
    data_id: String,
    category_id: String,
    timestamp: u64,
    history: Vec<(String, String, u64, bool, bool)>,
    auth: Vec<(String, String)>,
    window: (u64, u64),
    thr_attack: f64,
    thr_freq: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let records = history
        .into_iter()
        .map(|(data_id, category_id, timestamp, authorized, leaked)| AccessRecord {
            data_id,
            category_id,
            timestamp,
            authorized,
            leaked,
        })
        .collect();
    let history = UserHistory::new(user_id.clone(), records).map_err(to_py)?;
    let auth: AuthorizationSet = auth.into_iter().collect();
    let request = AccessRequest {
        user_id,
        data_id,
        category_id,
        timestamp,
    };
    let window = TimeWindow::new(window.0, window.1).map_err(to_py)?;
    let thr = SecurityThresholds::new(thr_attack, thr_freq).map_err(to_py)?;
    let a = ube::assess(&request, &history, &auth, &window, &thr).map_err(to_py)?;

    let out = PyDict::new(py);
    for p in [Parameter::History, Parameter::Authorization, Parameter::AttackFactor, Parameter::LeakFrequency] {
        out.set_item(p.name(), a.flag(p).map_or(0, |f| f.value()))?;
    }
    out.set_item("attack_factor", a.attack_factor)?;
    out.set_item("leak_frequency", a.leak_frequency)?;
    out.set_item("sigma_total", a.sigma_total)?;
    out.set_item("malicious", a.intent == Intent::Malicious)?;
    Ok(out)
}

/// Shard-size weights `n_k / sum(n_j)`.
#[pyfunction]
fn aggregation_weights(sizes: Vec<usize>) -> PyResult<Vec<f64>> {
    fed::aggregation_weights(&sizes).map_err(to_py)
}

/// Weighted average of `(parameters, shard_size)` updates for a network of
/// the given variant.
#[pyfunction]
#[pyo3(signature = (updates, variant="afed"))]
fn aggregate(updates: Vec<(Vec<f64>, usize)>, variant: &str) -> PyResult<Vec<f64>> {
    let spec = NetworkSpec::for_variant(self::variant(variant)?);
    let locals = updates
        .into_iter()
        .map(|(v, n)| Ok((ParameterVector::from_values(&spec, v).map_err(to_py)?, n)))
        .collect::<PyResult<Vec<_>>>()?;
    Ok(fed::aggregate(&locals).map_err(to_py)?.values().to_vec())
}

/// Support-weighted metrics for class codes 1..=3.
#[pyfunction]
fn metrics_report<'py>(py: Python<'py>, truth: Vec<u8>, predicted: Vec<u8>) -> PyResult<Bound<'py, PyDict>> {
    let cm = metrics::confusion_from_codes(&truth, &predicted).map_err(to_py)?;
    let r = metrics::report(&cm).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("accuracy", r.accuracy)?;
    out.set_item("precision", r.precision)?;
    out.set_item("recall", r.recall)?;
    out.set_item("f1", r.f1)?;
    out.set_item("confusion", cm.counts)?;
    Ok(out)
}

/// Gate rule on its own: `(verdict, reason)` for a predicted class code and
/// the behaviour verdict.
#[pyfunction]
fn combine(predicted_class: u8, ube_malicious: bool) -> PyResult<(String, String)> {
    let intent = if ube_malicious { Intent::Malicious } else { Intent::NonMalicious };
    let (v, r) = gate::combine(label(predicted_class)?, intent);
    Ok((v.to_string(), r.to_string()))
}

fn report_dict<'py>(py: Python<'py>, r: &RoundReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("round", r.round_index)?;
    d.set_item("accuracy", r.accuracy)?;
    d.set_item("precision", r.precision)?;
    d.set_item("recall", r.recall)?;
    d.set_item("f1", r.f1)?;
    d.set_item("loss", r.mean_global_loss)?;
    d.set_item("participants", r.participant_ids.clone())?;
    Ok(d)
}

/// A trained global model with its normalization statistics.
#[pyclass(name = "Model", module = "fedmup")]
struct PyModel {
    inner: Checkpoint,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn round(&self) -> usize {
        self.inner.model.round_index
    }

    #[getter]
    fn parameters(&self) -> Vec<f64> {
        self.inner.model.params.values().to_vec()
    }

    fn normalize(&self, features: [f64; NUM_FEATURES]) -> PyResult<[f64; NUM_FEATURES]> {
        let stats = self
            .inner
            .stats
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("model has no normalization statistics"))?;
        Ok(stats.apply(&features))
    }

    /// Class code for one raw feature vector.
    fn predict(&self, features: [f64; NUM_FEATURES]) -> PyResult<u8> {
        let x = self.normalize(features)?;
        let m = &self.inner.model;
        Ok(model::predict(&m.params, &m.spec, &x).map_err(to_py)?.code())
    }

    /// Metrics and loss on a raw labeled dataset.
    fn evaluate<'py>(&self, py: Python<'py>, data: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
        let stats = self
            .inner
            .stats
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("model has no normalization statistics"))?;
        let norm = dataset::apply_stats(&data.inner, stats).map_err(to_py)?;
        let (r, loss, cm) = self.inner.model.evaluate(&norm).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("accuracy", r.accuracy)?;
        d.set_item("precision", r.precision)?;
        d.set_item("recall", r.recall)?;
        d.set_item("f1", r.f1)?;
        d.set_item("loss", loss)?;
        d.set_item("confusion", cm.counts)?;
        Ok(d)
    }

    /// Full gate decision: `(verdict, reason, predicted_class, sigma_total)`.
    #[pyo3(signature = (user_id, data_id, category_id, timestamp, features, history, auth, window=None, thr_attack=0.5, thr_freq=0.3))]
    #[allow(clippy::too_many_arguments)]
    fn decide(
        &self,
        py: Python<'_>,
        user_id: String,
        data_id: String,
        category_id: String,
        timestamp: u64,
        features: [f64; NUM_FEATURES],
        history: Vec<(String, String, u64, bool, bool)>,
        auth: Vec<(String, String)>,
        window: Option<(u64, u64)>,
        thr_attack: f64,
        thr_freq: f64,
    ) -> PyResult<(String, String, u8, u32)> {
        let window = window.unwrap_or((0, timestamp));
        let a = assess(
            py,
            user_id.clone(),
            data_id.clone(),
            category_id.clone(),
            timestamp,
            history,
            auth,
            window,
            thr_attack,
            thr_freq,
        )?;
        let malicious: bool = a.get_item("malicious")?.expect("set above").extract()?;
        let sigma: u32 = a.get_item("sigma_total")?.expect("set above").extract()?;
        let predicted = self.predict(features)?;
        let (v, r) = combine(predicted, malicious)?;
        Ok((v, r, predicted, sigma))
    }
}

/// Runs a full federated experiment. Without `data`, 10000 records are
/// generated with seed 42 and mix (0.3, 0.5, 0.2).
///
/// Returns `(model, initial_report, round_reports)`.
#[pyfunction]
#[pyo3(signature = (users=10, k=10, rounds=50, epochs=90, variant="afed", seed=42, data=None, batch_size=32, learning_rate=1e-3, split=0.8, parallel=false))]
#[allow(clippy::too_many_arguments)]
fn run_experiment<'py>(
    py: Python<'py>,
    users: usize,
    k: usize,
    rounds: usize,
    epochs: usize,
    variant: &str,
    seed: u64,
    data: Option<&PyDataset>,
    batch_size: usize,
    learning_rate: f64,
    split: f64,
    parallel: bool,
) -> PyResult<(PyModel, Bound<'py, PyDict>, Vec<Bound<'py, PyDict>>)> {
    let config = RoundConfig {
        total_users: users,
        participants_per_round: k,
        rounds,
        local_epochs: epochs,
        training: TrainingConfig {
            epochs,
            batch_size,
            learning_rate,
            ..TrainingConfig::default()
        },
        train_fraction: split,
        seed,
        parallel,
    };
    let spec = NetworkSpec::for_variant(self::variant(variant)?);
    let raw = match data {
        Some(d) => d.inner.clone(),
        None => dataset::synthesize(10_000, 42, [0.3, 0.5, 0.2]).map_err(to_py)?,
    };
    let outcome = py
        .detach(|| fed::run_experiment(&config, &spec, &raw))
        .map_err(to_py)?;
    let reports = outcome
        .reports
        .iter()
        .map(|r| report_dict(py, r))
        .collect::<PyResult<Vec<_>>>()?;
    let model = PyModel {
        inner: Checkpoint {
            model: outcome.model,
            stats: Some(outcome.stats),
        },
    };
    Ok((model, report_dict(py, &outcome.initial)?, reports))
}

#[pymodule(name = "fedmup")]
fn fedmup_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(assess, m)?)?;
    m.add_function(wrap_pyfunction!(aggregation_weights, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_report, m)?)?;
    m.add_function(wrap_pyfunction!(combine, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}

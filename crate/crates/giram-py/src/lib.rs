//! Python bindings over the core engine: interest memory, retrieval, key
//! generation, metrics, the synthetic generator, and the experiment runner.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use giram_core::config::ExperimentConfig;
use giram_core::error::Error;
use giram_core::eval::{self, PredictionRecord};
use giram_core::experiment;
use giram_core::ingest;
use giram_core::keyenc::KeyVector;
use giram_core::keygen::{self, KeyGenConfig};
use giram_core::memory::{self, MemoryConfig, UpdateOutcome};
use giram_core::retrieval::{self, RrfConfig};
use giram_core::synth;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Per-user interest memory holding (key, sparse value, timestamp) triples.
#[pyclass(name = "InterestMemory")]
struct PyInterestMemory {
    inner: memory::InterestMemory,
}

#[pymethods]
impl PyInterestMemory {
    #[new]
    #[pyo3(signature = (capacity, top_k, d_k, d_v))]
    fn new(capacity: usize, top_k: usize, d_k: usize, d_v: usize) -> Self {
        PyInterestMemory {
            inner: memory::InterestMemory::new(MemoryConfig { capacity, top_k }, d_k, d_v),
        }
    }

    /// Insert or blend one (key, dense-score, timestamp) observation for a
    /// user. Returns "matched", "inserted", or "evicted".
    #[pyo3(signature = (user, key, scores, alpha, delta, timestamp))]
    fn update(
        &mut self,
        user: u32,
        key: Vec<f64>,
        scores: Vec<f64>,
        alpha: f64,
        delta: f64,
        timestamp: i64,
    ) -> PyResult<String> {
        let value = memory::topk_sparse(&scores, self.inner.config().top_k);
        let outcome = self
            .inner
            .apply_update(user, &KeyVector(key), &value, alpha, delta, timestamp)
            .map_err(to_py_err)?;
        Ok(match outcome {
            UpdateOutcome::Matched { .. } => "matched".to_string(),
            UpdateOutcome::Inserted => "inserted".to_string(),
            UpdateOutcome::Evicted { .. } => "evicted".to_string(),
        })
    }

    /// Number of entries stored for one user.
    fn user_len(&self, user: u32) -> usize {
        self.inner.user(user).map(|m| m.len()).unwrap_or(0)
    }

    fn total_entries(&self) -> usize {
        self.inner.total_entries()
    }

    /// RRF-weighted sustained-interest vector for a user and query keys.
    #[pyo3(signature = (user, keys, a = 50.0))]
    fn sustained_interest(&self, user: u32, keys: Vec<Vec<f64>>, a: f64) -> PyResult<Vec<f64>> {
        let dim = self.inner.d_v();
        let mem = match self.inner.user(user) {
            Some(m) => m,
            None => return Ok(vec![0.0; dim]),
        };
        let keys: Vec<KeyVector> = keys.into_iter().map(KeyVector).collect();
        retrieval::sustained_interest(mem, &keys, &RrfConfig { a }, dim).map_err(to_py_err)
    }

    /// 1-based ranks of a user's entries under one query key.
    fn rank_entries(&self, user: u32, key: Vec<f64>) -> PyResult<Vec<usize>> {
        let mem = self
            .inner
            .user(user)
            .ok_or_else(|| PyValueError::new_err(format!("user {user} has no memory")))?;
        retrieval::rank_entries(mem, &KeyVector(key)).map_err(to_py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyInterestMemory {
            inner: memory::InterestMemory::load(&path).map_err(to_py_err)?,
        })
    }
}

/// Conditional-VAE key generator trained on a list of keys.
#[pyclass(name = "KeyGenerator")]
struct PyKeyGenerator {
    inner: keygen::KeyGenerator,
    n_k: usize,
}

#[pymethods]
impl PyKeyGenerator {
    #[new]
    #[pyo3(signature = (keys, n_k = 20, epochs = 20, latent_dim = 32, hidden_dim = 128, seed = 0))]
    fn new(
        keys: Vec<Vec<f64>>,
        n_k: usize,
        epochs: usize,
        latent_dim: usize,
        hidden_dim: usize,
        seed: u64,
    ) -> PyResult<Self> {
        if keys.is_empty() {
            return Err(PyValueError::new_err("need at least one key"));
        }
        let d_k = keys[0].len();
        let cfg = KeyGenConfig {
            n_k,
            epochs,
            latent_dim,
            hidden_dim,
            seed,
            ..KeyGenConfig::default()
        };
        let keys: Vec<KeyVector> = keys.into_iter().map(KeyVector).collect();
        Ok(PyKeyGenerator {
            inner: keygen::train_generator(&keys, d_k, &cfg).map_err(to_py_err)?,
            n_k,
        })
    }

    /// Generate diverse query keys conditioned on `key`.
    #[pyo3(signature = (key, seed, n_k = None))]
    fn generate(&self, key: Vec<f64>, seed: u64, n_k: Option<usize>) -> Vec<Vec<f64>> {
        self.inner
            .generate(&KeyVector(key), n_k.unwrap_or(self.n_k), seed)
            .into_iter()
            .map(|k| k.0)
            .collect()
    }
}

/// Softmax then top-k truncation; returns (index, probability) pairs.
#[pyfunction]
fn topk_sparse(scores: Vec<f64>, k: usize) -> Vec<(u32, f64)> {
    memory::topk_sparse(&scores, k).entries().to_vec()
}

/// 1-based rank of the truth index under descending scores.
#[pyfunction]
fn rank_of_truth(scores: Vec<f64>, truth: usize) -> PyResult<usize> {
    eval::rank_of_truth(&scores, truth).map_err(to_py_err)
}

fn to_records(ranks: Vec<usize>) -> Vec<PredictionRecord> {
    ranks
        .into_iter()
        .enumerate()
        .map(|(i, rank)| PredictionRecord {
            rank,
            trajectory: i,
            position: 0,
        })
        .collect()
}

/// Fraction of ranks at or under k.
#[pyfunction]
fn acc_at_k(ranks: Vec<usize>, k: usize) -> PyResult<f64> {
    eval::acc_at_k(&to_records(ranks), k).map_err(to_py_err)
}

/// Mean reciprocal rank.
#[pyfunction]
fn mrr(ranks: Vec<usize>) -> PyResult<f64> {
    eval::mrr(&to_records(ranks)).map_err(to_py_err)
}

/// Generate a synthetic check-in CSV (plus category map) under `out_dir`.
#[pyfunction]
#[pyo3(signature = (out_dir, users = 100, pois = 200, blocks = 6, events_per_user_per_block = 10, drift = 0.2, noise = 0.1, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn write_synth_csv(
    out_dir: PathBuf,
    users: usize,
    pois: usize,
    blocks: usize,
    events_per_user_per_block: usize,
    drift: f64,
    noise: f64,
    seed: u64,
) -> PyResult<(String, String)> {
    let spec = synth::SynthSpec {
        n_users: users,
        n_pois: pois,
        n_blocks: blocks,
        events_per_user_per_block,
        drift_rate: drift,
        noise_rate: noise,
        seed,
        ..synth::SynthSpec::default()
    };
    let events = synth::generate(&spec).map_err(to_py_err)?;
    std::fs::create_dir_all(&out_dir)?;
    let data_path = out_dir.join("checkins.csv");
    ingest::write_checkins(&data_path, &events).map_err(to_py_err)?;
    let map_path = out_dir.join("category_map.csv");
    let mut map_csv = String::from("raw,derived\n");
    for (raw, derived) in synth::category_map_rows(&spec) {
        map_csv.push_str(&format!("{raw},{derived}\n"));
    }
    std::fs::write(&map_path, map_csv)?;
    Ok((
        data_path.display().to_string(),
        map_path.display().to_string(),
    ))
}

/// Run a full continual experiment. `config_toml` may be a path or inline
/// TOML text; overrides are applied on top. Returns a summary dict.
#[pyfunction]
#[pyo3(signature = (config_toml = None, method = None, seed = None, out_dir = None))]
fn run_experiment(
    py: Python<'_>,
    config_toml: Option<String>,
    method: Option<String>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
) -> PyResult<Py<PyDict>> {
    let mut cfg = match config_toml {
        None => ExperimentConfig::default(),
        Some(text) => {
            let path = PathBuf::from(&text);
            if path.exists() {
                ExperimentConfig::load(&path).map_err(to_py_err)?
            } else {
                ExperimentConfig::from_toml_str(&text).map_err(to_py_err)?
            }
        }
    };
    if let Some(m) = method {
        cfg.run.method = m.parse().map_err(to_py_err)?;
    }
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(dir) = out_dir {
        cfg.run.out_dir = dir;
    }
    let result = experiment::run_experiment(&cfg).map_err(to_py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("method", &result.method)?;
    dict.set_item("seed", result.seed)?;
    dict.set_item("mean_acc5", result.mean.acc5)?;
    dict.set_item("mean_acc10", result.mean.acc10)?;
    dict.set_item("mean_acc20", result.mean.acc20)?;
    dict.set_item("mean_mrr", result.mean.mrr)?;
    dict.set_item("instances", result.mean.n)?;
    let blocks: Vec<(usize, f64, f64, f64, f64)> = result
        .per_block
        .iter()
        .map(|b| (b.block, b.acc5, b.acc10, b.acc20, b.mrr))
        .collect();
    dict.set_item("per_block", blocks)?;
    dict.set_item("out_dir", cfg.run.out_dir.display().to_string())?;
    Ok(dict.into())
}

#[pymodule]
fn giram_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInterestMemory>()?;
    m.add_class::<PyKeyGenerator>()?;
    m.add_function(wrap_pyfunction!(topk_sparse, m)?)?;
    m.add_function(wrap_pyfunction!(rank_of_truth, m)?)?;
    m.add_function(wrap_pyfunction!(acc_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mrr, m)?)?;
    m.add_function(wrap_pyfunction!(write_synth_csv, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}

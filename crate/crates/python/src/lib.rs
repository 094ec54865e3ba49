//! Python bindings, importable as `gmcd`.
//!
//! Sequences cross the boundary as lists of ints. Configs go in as JSON
//! strings with the same keys as the TOML sections of the CLI.

use gmcd::checkpoint::Checkpoint;
use gmcd::metrics::{file_budget, pattern_correlation, poissonized_empirical, select_patterns, ListSource, MetricsReport};
use gmcd::rng::seeded;
use gmcd::sampling::{entropy_trajectory, sample_many, SampleRequest};
use gmcd::synthdata::{sample_truth_seeded, truth_pmf, GroundTruth};
use gmcd::training::{fit, TrainConfig};
use gmcd::{
    linear_schedule, pack_sphere as core_pack, CategorySequence, GmcdError, NoiseSchedule, Omega, PackingConfig,
    PackingResult, Predictor, PredictorConfig,
};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: GmcdError) -> PyErr {
    let msg = format!("{}: {err}", err.code());
    match err {
        GmcdError::Io(_) => PyIOError::new_err(msg),
        GmcdError::Integrity(_) | GmcdError::Numeric(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn seqs(raw: Vec<Vec<usize>>) -> Vec<CategorySequence> {
    raw.into_iter().map(CategorySequence).collect()
}

fn unseqs(s: Vec<CategorySequence>) -> Vec<Vec<usize>> {
    s.into_iter().map(|x| x.0).collect()
}

fn from_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    match text {
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(format!("JSON: {e}"))),
        None => Ok(T::default()),
    }
}

/// Category means on the unit sphere.
#[pyclass(name = "Packing", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPacking(PackingResult);

#[pymethods]
impl PyPacking {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        PackingResult::from_json(text).map(Self).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(to_py)
    }

    #[getter]
    fn num_categories(&self) -> usize {
        self.0.num_categories
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.0.latent_dim
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.0.means.clone()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }

    #[getter]
    fn min_pair_sq_dist(&self) -> f64 {
        self.0.min_pair_sq_dist
    }

    fn __repr__(&self) -> String {
        format!("Packing(K={}, d={}, sigma={:.6})", self.0.num_categories, self.0.latent_dim, self.0.sigma)
    }
}

/// Linear beta schedule.
#[pyclass(name = "Schedule", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySchedule(NoiseSchedule);

impl PySchedule {
    fn check(&self, t: usize) -> PyResult<()> {
        if t == 0 || t > self.0.steps() {
            return Err(PyValueError::new_err(format!("INVALID_ARGUMENT: t={t} outside [1, {}]", self.0.steps())));
        }
        Ok(())
    }
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (steps = 10, beta_start = 1e-4, beta_end = 0.3))]
    fn new(steps: usize, beta_start: f64, beta_end: f64) -> PyResult<Self> {
        linear_schedule(steps, beta_start, beta_end).map(Self).map_err(to_py)
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps()
    }

    #[getter]
    fn betas(&self) -> Vec<f64> {
        self.0.betas().to_vec()
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        self.check(t)?;
        Ok(self.0.alpha_bar(t))
    }

    /// `(c0, ct, var)` of the forward posterior at step `t`.
    fn posterior_coefficients(&self, t: usize) -> PyResult<(f64, f64, f64)> {
        self.check(t)?;
        Ok(self.0.posterior_coefficients(t))
    }
}

/// A trained predictor together with its packing and schedule.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    ckpt: Checkpoint,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Checkpoint::load(path.as_ref()).map(|ckpt| Self { ckpt }).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.ckpt.save(path.as_ref()).map_err(to_py)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.ckpt.state.predictor.num_params()
    }

    #[getter]
    fn step(&self) -> u64 {
        self.ckpt.state.step()
    }

    #[getter]
    fn packing(&self) -> PyPacking {
        PyPacking(self.ckpt.packing.clone())
    }

    #[pyo3(signature = (num_samples, seed = 0, map_intermediate = false))]
    fn sample(&self, py: Python<'_>, num_samples: usize, seed: u64, map_intermediate: bool) -> PyResult<Vec<Vec<usize>>> {
        let req = SampleRequest { num_samples, seed, map_intermediate, ..SampleRequest::default() };
        let ck = &self.ckpt;
        let out = py
            .detach(|| sample_many(&ck.state.predictor, &ck.packing, &ck.schedule, &req))
            .map_err(to_py)?;
        Ok(unseqs(out.samples))
    }

    /// Mean predictor entropy per step; entry `t - 1` belongs to step `t`.
    #[pyo3(signature = (num_chains = 512, seed = 0))]
    fn entropy_trajectory(&self, py: Python<'_>, num_chains: usize, seed: u64) -> PyResult<Vec<f64>> {
        let ck = &self.ckpt;
        py.detach(|| entropy_trajectory(&ck.state.predictor, &ck.packing, &ck.schedule, num_chains, seed))
            .map_err(to_py)
    }
}

#[pyfunction]
#[pyo3(signature = (num_categories, latent_dim, seed = 0, config_json = None))]
fn pack_sphere(num_categories: usize, latent_dim: usize, seed: u64, config_json: Option<&str>) -> PyResult<PyPacking> {
    let mut cfg: PackingConfig = from_json(config_json)?;
    cfg.num_categories = num_categories;
    cfg.latent_dim = latent_dim;
    cfg.rng_seed = seed;
    core_pack(&cfg).map(PyPacking).map_err(to_py)
}

/// Exact draws from the synthetic permutation distribution.
#[pyfunction]
fn sample_truth(k: usize, n: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    sample_truth_seeded(k, n, seed).map(unseqs).map_err(to_py)
}

#[pyfunction]
fn truth_probability(x: Vec<usize>, k: usize) -> PyResult<f64> {
    truth_pmf(&CategorySequence(x), k).map_err(to_py)
}

/// Trains a predictor. `predictor_json` and `training_json` take the keys
/// of the `[predictor]` and `[training]` config sections; shape fields are
/// filled from the data.
#[pyfunction]
#[pyo3(signature = (train, valid, packing, schedule, predictor_json = None, training_json = None))]
fn train_model(
    py: Python<'_>,
    train: Vec<Vec<usize>>,
    valid: Vec<Vec<usize>>,
    packing: &PyPacking,
    schedule: &PySchedule,
    predictor_json: Option<&str>,
    training_json: Option<&str>,
) -> PyResult<PyModel> {
    let train = seqs(train);
    let valid = seqs(valid);
    let mut pcfg: PredictorConfig = from_json(predictor_json)?;
    let tcfg: TrainConfig = from_json(training_json)?;
    let s = train.first().map(|x| x.len()).ok_or_else(|| PyValueError::new_err("empty training set"))?;
    pcfg.seq_len = s;
    pcfg.latent_dim = packing.0.latent_dim;
    pcfg.num_categories = packing.0.num_categories;
    let pack = packing.0.clone();
    let sched = schedule.0.clone();
    let outcome = py
        .detach(|| -> gmcd::Result<_> {
            let predictor = Predictor::new(pcfg)?;
            fit(&train, &valid, &pack, &sched, predictor, &tcfg)
        })
        .map_err(to_py)?;
    Ok(PyModel {
        ckpt: Checkpoint {
            state: outcome.best,
            schedule: schedule.0.clone(),
            packing: packing.0.clone(),
            meta: serde_json::Value::Null,
        },
    })
}

/// Poissonized synthetic metrics as a JSON string.
#[pyfunction]
#[pyo3(signature = (samples, k, seed = 0, budget = None))]
fn evaluate_synthetic(samples: Vec<Vec<usize>>, k: usize, seed: u64, budget: Option<f64>) -> PyResult<String> {
    let samples = seqs(samples);
    let truth = GroundTruth::new(k).map_err(to_py)?;
    let m = budget.unwrap_or_else(|| file_budget(samples.len()));
    let mut rng = seeded(seed);
    let phat = poissonized_empirical(&mut ListSource::new(&samples), m, seed, &mut rng).map_err(to_py)?;
    MetricsReport::synthetic(&phat, &truth, samples.len())
        .and_then(|r| r.to_json())
        .map_err(to_py)
}

/// Pearson correlation of pattern covariations between two corpora.
#[pyfunction]
#[pyo3(signature = (reference, generated, pattern_length, n_positions = 100, top_k = 10, seed = 0))]
fn pattern_rho(
    reference: Vec<Vec<usize>>,
    generated: Vec<Vec<usize>>,
    pattern_length: usize,
    n_positions: usize,
    top_k: usize,
    seed: u64,
) -> PyResult<f64> {
    let reference = seqs(reference);
    let generated = seqs(generated);
    let pats = select_patterns(&reference, pattern_length, n_positions, top_k, &mut seeded(seed)).map_err(to_py)?;
    pattern_correlation(&reference, &generated, &pats).map_err(to_py)
}

/// Parses an omega value; "inf" selects the hard target.
#[pyfunction]
fn parse_omega(text: &str) -> PyResult<String> {
    let omega: Omega = text.parse().map_err(to_py)?;
    serde_json::to_string(&omega).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "gmcd")]
fn gmcd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPacking>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(pack_sphere, m)?)?;
    m.add_function(wrap_pyfunction!(sample_truth, m)?)?;
    m.add_function(wrap_pyfunction!(truth_probability, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(pattern_rho, m)?)?;
    m.add_function(wrap_pyfunction!(parse_omega, m)?)?;
    Ok(())
}

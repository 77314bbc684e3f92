//! Python bindings over the core pipeline: configure, train, infer,
//! evaluate, and probe the implicit reasoning space without the CLI.
//!
//! The module exposes `Config` (load TOML plus dotted-key overrides),
//! `train()` returning an `Artifacts` handle whose methods answer
//! queries, score the test split, and run the paraphrase probe, plus the
//! small pure helpers (`extract_answer`, `accuracy_percent`).

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use semcot::config::Config;
use semcot::error::Error;
use semcot::run::{RunDir, RunLogger};
use semcot::training::{run_pipeline, PipelineArtifacts};

fn to_py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        serde_json::Value::Null => py.None().into_bound(py),
        serde_json::Value::Bool(b) => pyo3::types::PyBool::new(py, *b).to_owned().into_any(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        serde_json::Value::String(s) => pyo3::types::PyString::new(py, s).into_any(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, val) in map {
                dict.set_item(k, json_to_py(py, val)?)?;
            }
            dict.into_any()
        }
    })
}

/// Resolved pipeline configuration.
#[pyclass(name = "Config")]
#[derive(Clone)]
struct PyConfig {
    inner: Config,
}

#[pymethods]
impl PyConfig {
    /// Load from an optional TOML file, then apply dotted-key overrides
    /// like "generator.lambda=0.7". Omitted keys keep their defaults.
    #[new]
    #[pyo3(signature = (path=None, overrides=None))]
    fn new(path: Option<String>, overrides: Option<Vec<String>>) -> PyResult<Self> {
        let ov = overrides.unwrap_or_default();
        let inner = Config::load(path.as_deref().map(Path::new), &ov).map_err(to_py_err)?;
        Ok(PyConfig { inner })
    }

    /// Serialized form, identical to the run-directory snapshot.
    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    /// Content hash identifying this exact configuration.
    fn hash(&self) -> String {
        semcot::evaluation::config_hash(&self.inner)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(seed={}, task={:?}, scorer={:?}, lambda={})",
            self.inner.seed,
            self.inner.data.task,
            self.inner.generator.scorer,
            self.inner.generator.lambda
        )
    }
}

/// Trained pipeline: the frozen answer model, scorer, and generator,
/// plus the data splits they were trained on.
#[pyclass(name = "Artifacts")]
struct PyArtifacts {
    cfg: Config,
    arts: PipelineArtifacts,
    run: Option<RunDir>,
}

#[pymethods]
impl PyArtifacts {
    /// Answer a query through the implicit path (one generator pass, then
    /// short greedy decoding). Returns {text, target_passes,
    /// generator_passes, answer}.
    #[pyo3(signature = (query, k=None))]
    fn infer_implicit<'py>(
        &self,
        py: Python<'py>,
        query: &str,
        k: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let k = k.unwrap_or(self.cfg.generator.k_eval);
        let run = semcot::inference::implicit_infer(
            &self.arts.target,
            &self.arts.generator,
            &self.arts.tok,
            &self.arts.tok_small,
            query,
            k,
            &self.cfg.inference,
        );
        let answer = semcot::inference::extract_answer(&self.cfg.data.task, &run.text);
        json_to_py(
            py,
            &serde_json::json!({
                "text": run.text,
                "target_passes": run.target_passes,
                "generator_passes": run.generator_passes,
                "answer": answer,
            }),
        )
    }

    /// Answer a query through the explicit path (the answer model writes
    /// its reasoning out in tokens first).
    fn infer_explicit<'py>(&self, py: Python<'py>, query: &str) -> PyResult<Bound<'py, PyAny>> {
        let run = semcot::inference::explicit_infer(
            &self.arts.target,
            &self.arts.tok,
            query,
            &self.cfg.inference,
        );
        let answer = semcot::inference::extract_answer(&self.cfg.data.task, &run.text);
        json_to_py(
            py,
            &serde_json::json!({
                "text": run.text,
                "target_passes": run.target_passes,
                "generator_passes": run.generator_passes,
                "answer": answer,
            }),
        )
    }

    /// Score both methods on the held-out test split. Returns the list of
    /// per-method report dicts; files land in the run directory when the
    /// artifacts were trained with one.
    fn evaluate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let mut logger = RunLogger::null();
        let out =
            semcot::evaluation::evaluate_pipeline(&self.cfg, &self.arts, self.run.as_ref(), &mut logger)
                .map_err(to_py_err)?;
        let v = serde_json::to_value(&out.reports)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        json_to_py(py, &v)
    }

    /// Paraphrase probe: embed variant sets, project, and measure
    /// within/between dispersion. Returns the summary dict.
    #[pyo3(signature = (n_queries=3, variants_per_query=20))]
    fn case_study<'py>(
        &self,
        py: Python<'py>,
        n_queries: usize,
        variants_per_query: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut logger = RunLogger::null();
        let out = semcot::case_study::run_case_study(
            &self.cfg,
            &self.arts,
            self.run.as_ref(),
            &mut logger,
            n_queries,
            variants_per_query,
        )
        .map_err(to_py_err)?;
        json_to_py(
            py,
            &serde_json::json!({
                "n_points": out.labels.len(),
                "within": out.report.within,
                "between": out.report.between,
                "ratio": out.report.ratio,
                "pca_degenerate": out.pca.degenerate,
                "explained_variance": out.pca.explained,
            }),
        )
    }

    /// Scorer embedding of a reasoning text, or None for the scorer-free
    /// variants.
    fn encode(&self, text: &str) -> Option<Vec<f64>> {
        self.arts
            .scorer
            .reference(&self.arts.tok, &self.arts.target, text)
            .map(|row| row.iter().copied().collect())
    }

    /// Content hashes of the three trained components.
    fn hashes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(
            py,
            &serde_json::json!({
                "target": self.arts.freeze.target_after,
                "scorer": self.arts.freeze.scorer_after,
                "generator": self.arts.freeze.generator_after,
            }),
        )
    }

    /// (train, val, test) example counts.
    fn split_sizes(&self) -> (usize, usize, usize) {
        (
            self.arts.splits.train.len(),
            self.arts.splits.val.len(),
            self.arts.splits.test.len(),
        )
    }

    /// Test-split queries with gold answers, for driving inference by hand.
    fn test_queries<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let rows: Vec<serde_json::Value> = self
            .arts
            .splits
            .test
            .iter()
            .map(|e| {
                serde_json::json!({
                    "id": e.id,
                    "query": e.query,
                    "answer": e.answer,
                    "domain": e.domain,
                })
            })
            .collect();
        json_to_py(py, &serde_json::Value::Array(rows))
    }

    fn __repr__(&self) -> String {
        format!(
            "Artifacts(scorer={}, train={}, test={})",
            self.arts.scorer.kind(),
            self.arts.splits.train.len(),
            self.arts.splits.test.len()
        )
    }
}

/// Train the full pipeline for a configuration. With `run_dir`, logs,
/// checkpoints, and the config snapshot are written there.
#[pyfunction]
#[pyo3(signature = (config, run_dir=None))]
fn train(config: &PyConfig, run_dir: Option<String>) -> PyResult<PyArtifacts> {
    let run = match run_dir {
        Some(p) => Some(RunDir::create(Path::new(&p)).map_err(to_py_err)?),
        None => None,
    };
    let mut logger = match &run {
        Some(r) => RunLogger::for_dir(r).map_err(to_py_err)?,
        None => RunLogger::null(),
    };
    let arts = run_pipeline(&config.inner, run.as_ref(), &mut logger).map_err(to_py_err)?;
    Ok(PyArtifacts {
        cfg: config.inner.clone(),
        arts,
        run,
    })
}

/// Pull the final answer out of generated text for a task domain.
#[pyfunction]
#[pyo3(name = "extract_answer")]
fn extract_answer_py(domain: &str, text: &str) -> Option<String> {
    semcot::inference::extract_answer(domain, text)
}

/// Fraction correct as a percentage in [0, 100], rounded to 2 decimals.
#[pyfunction]
#[pyo3(name = "accuracy_percent")]
fn accuracy_percent_py(correct: usize, n: usize) -> f64 {
    semcot::evaluation::accuracy_percent(correct, n)
}

#[pymodule]
fn semcot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyArtifacts>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(extract_answer_py, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_percent_py, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

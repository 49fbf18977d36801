//! Python bindings: an `Engine` class for routing and answering single
//! queries, plus a few pure helpers.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use polykb::corpus::{EntityRef, EntityType, Query};
use polykb::evalkit::{gen_benchmark as gen_bench, metrics, BenchSpec, Report};
use polykb::pipeline::{read_corpus, read_queries, Engine, PipelineConfig, Strategy};

create_exception!(polykb, PolykbError, PyException);

fn err(e: polykb::Error) -> PyErr {
    PolykbError::new_err(format!("{}: {}", e.kind(), e))
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| PolykbError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn config_from(config_toml: Option<&str>) -> PyResult<PipelineConfig> {
    config_toml.map_or_else(|| Ok(PipelineConfig::default()), |s| PipelineConfig::from_toml(s).map_err(err))
}

fn make_query(query_id: &str, text: &str, entities: Vec<(String, String)>) -> PyResult<Query> {
    let ents = entities
        .iter()
        .map(|(name, kind)| EntityRef::new(name, EntityType::from_str(kind).map_err(PolykbError::new_err)?).map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    Ok(Query::new(query_id, text).with_entities(ents))
}

#[pyclass(name = "Engine", frozen)]
struct PyEngine {
    inner: Engine,
}

#[pymethods]
impl PyEngine {
    /// Loads a corpus JSONL and builds indexes and the graph in memory.
    /// `config_toml` is the text of a pipeline config.
    #[new]
    #[pyo3(signature = (corpus_path, config_toml=None))]
    fn new(py: Python<'_>, corpus_path: PathBuf, config_toml: Option<&str>) -> PyResult<Self> {
        let config = config_from(config_toml)?;
        let inner = py
            .detach(|| {
                let corpus = read_corpus(&corpus_path, config.kbs.clone())?;
                Engine::new(corpus, config)
            })
            .map_err(err)?;
        Ok(PyEngine { inner })
    }

    /// Opens prebuilt artifacts as named by a config file, like `polykb run`.
    #[staticmethod]
    fn open(py: Python<'_>, config_path: PathBuf) -> PyResult<Self> {
        let inner = py
            .detach(|| PipelineConfig::load(&config_path).and_then(Engine::open))
            .map_err(err)?;
        Ok(PyEngine { inner })
    }

    /// Routing decision for one query: features, scores, ranking, budgets.
    #[pyo3(signature = (text, entities=Vec::new(), query_id="q"))]
    fn route<'py>(
        &self,
        py: Python<'py>,
        text: &str,
        entities: Vec<(String, String)>,
        query_id: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let q = make_query(query_id, text, entities)?;
        let d = py.detach(|| self.inner.route(&q)).map_err(err)?;
        to_py(py, &d)
    }

    /// Full trace for one query under one strategy.
    #[pyo3(signature = (text, entities=Vec::new(), strategy="daks_graph_full", query_id="q"))]
    fn answer<'py>(
        &self,
        py: Python<'py>,
        text: &str,
        entities: Vec<(String, String)>,
        strategy: &str,
        query_id: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let q = make_query(query_id, text, entities)?;
        let s = Strategy::from_str(strategy).map_err(err)?;
        let t = py.detach(|| self.inner.run_query(&q, &s)).map_err(err)?;
        to_py(py, &t)
    }

    /// Runs strategies over a gold-labelled query file and returns the report.
    #[pyo3(signature = (queries_path, strategies=None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        queries_path: PathBuf,
        strategies: Option<Vec<String>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let strategies = match strategies {
            Some(names) => names.iter().map(|n| Strategy::from_str(n).map_err(err)).collect::<PyResult<_>>()?,
            None => self.inner.config().strategies(),
        };
        let report = py.detach(|| evaluate(&self.inner, &queries_path, &strategies)).map_err(err)?;
        to_py(py, &report)
    }

    fn kbs(&self) -> Vec<String> {
        self.inner.corpus().kbs().iter().map(|k| k.to_string()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.corpus().len()
    }
}

fn evaluate(engine: &Engine, queries_path: &Path, strategies: &[Strategy]) -> polykb::Result<Report> {
    let queries = read_queries(queries_path, engine.corpus())?;
    let golds = queries
        .iter()
        .map(|q| {
            q.gold
                .clone()
                .map(|g| (q.query_id.clone(), g))
                .ok_or_else(|| polykb::Error::GoldMissing(q.query_id.clone()))
        })
        .collect::<polykb::Result<_>>()?;
    let eval = &engine.config().eval;
    let reports = strategies
        .iter()
        .map(|s| {
            let traces = engine.run(&queries, s)?;
            let rankings = traces.iter().map(|t| (t.query_id.clone(), t.ranking.clone())).collect();
            let packed = traces.iter().map(|t| (t.query_id.clone(), t.evidence_refs())).collect();
            polykb::evalkit::evaluate_strategy(&s.to_string(), &rankings, &packed, &golds, eval)
        })
        .collect::<polykb::Result<Vec<_>>>()?;
    Ok(Report::new(eval.k, reports))
}

#[pyfunction]
fn compute_token_len(text: &str) -> usize {
    polykb::corpus::compute_token_len(text)
}

/// Min-max normalization; a constant list maps to 0.5.
#[pyfunction]
fn normalize(values: Vec<f64>) -> PyResult<Vec<f64>> {
    polykb::scorers::normalize_values(&values).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (ranked_ids, gold_ids, k=5))]
fn ndcg_at_k(ranked_ids: Vec<String>, gold_ids: Vec<String>, k: usize) -> f64 {
    let ids: Vec<&str> = ranked_ids.iter().map(String::as_str).collect();
    metrics::ndcg_at_k(&ids, &gold_ids.into_iter().collect(), k)
}

/// Writes `corpus.jsonl` and `queries.jsonl` into `out_dir`.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=42, n_queries=500, density_bias=2.0))]
fn gen_benchmark<'py>(
    py: Python<'py>,
    out_dir: PathBuf,
    seed: u64,
    n_queries: usize,
    density_bias: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = BenchSpec {
        seed,
        n_queries,
        density_bias,
        ..BenchSpec::default()
    };
    let (chunks, queries) = py
        .detach(|| {
            let b = gen_bench(&spec)?;
            b.write_to(&out_dir)?;
            Ok::<_, polykb::Error>((b.corpus.len(), b.queries.len()))
        })
        .map_err(err)?;
    to_py(py, &serde_json::json!({ "chunks": chunks, "queries": queries }))
}

#[pymodule]
#[pyo3(name = "polykb")]
pub fn polykb_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PolykbError", m.py().get_type::<PolykbError>())?;
    m.add_class::<PyEngine>()?;
    m.add_function(wrap_pyfunction!(compute_token_len, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(gen_benchmark, m)?)?;
    Ok(())
}

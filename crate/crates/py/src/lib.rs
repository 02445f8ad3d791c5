//! Python bindings: facts and chains, benchmark construction, the reference
//! model with its editors, and the full suite.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use tke_core::bench::{self, BuildOptions, DatasetKind};
use tke_core::editors::{apply_edits, EditorConfig, Method};
use tke_core::evaluation::{aggregate, eval_record, score_record};
use tke_core::model::persist;
use tke_core::suite::{self, RunConfig, SuiteOutput};
use tke_core::temporal_kb::{self, YearRange};
use tke_core::{AliasTable, EditOp, Error, FactChain, LamModel, Metric, ModelConfig, StructuredQuery, TemplatePack, TimeRef};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::EditAborted(_) | Error::Numerical(_) | Error::Capacity { .. } | Error::ChainQuery { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Parse a serde enum from its string name (`"SE"`, `"CES"`, `"r1"`).
fn named<T: DeserializeOwned>(what: &str, name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} `{name}`")))
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &text)
}

// ---------------------------------------------------------------------------
// Facts and chains
// ---------------------------------------------------------------------------

/// A (subject, relation, object) triple valid from `t_start` to `t_end`
/// (inclusive years; `None` means still valid).
#[pyclass(name = "TemporalFact", frozen, eq, get_all, from_py_object)]
#[derive(Clone, PartialEq)]
struct PyFact {
    subject: String,
    relation: String,
    object: String,
    t_start: i32,
    t_end: Option<i32>,
}

impl PyFact {
    fn core(&self) -> PyResult<temporal_kb::TemporalFact> {
        temporal_kb::TemporalFact::new(&self.subject, &self.relation, &self.object, self.t_start, self.t_end)
            .map_err(py_err)
    }
}

impl From<&temporal_kb::TemporalFact> for PyFact {
    fn from(f: &temporal_kb::TemporalFact) -> Self {
        Self {
            subject: f.subject.clone(),
            relation: f.relation.clone(),
            object: f.object.clone(),
            t_start: f.t_start,
            t_end: f.t_end,
        }
    }
}

#[pymethods]
impl PyFact {
    #[new]
    #[pyo3(signature = (subject, relation, object, t_start, t_end=None))]
    fn new(subject: String, relation: String, object: String, t_start: i32, t_end: Option<i32>) -> PyResult<Self> {
        let fact = temporal_kb::TemporalFact::new(subject, relation, object, t_start, t_end).map_err(py_err)?;
        Ok(Self::from(&fact))
    }

    #[pyo3(signature = (year, horizon=2028))]
    fn contains_year(&self, year: i32, horizon: i32) -> PyResult<bool> {
        Ok(self.core()?.contains_year(year, horizon))
    }

    fn __repr__(&self) -> String {
        let end = self.t_end.map_or_else(|| "None".to_string(), |e| e.to_string());
        format!("TemporalFact({:?}, {:?}, {:?}, {}, {end})", self.subject, self.relation, self.object, self.t_start)
    }
}

fn core_facts(facts: &[PyFact]) -> PyResult<Vec<temporal_kb::TemporalFact>> {
    facts.iter().map(PyFact::core).collect()
}

/// Time-ordered, non-overlapping facts of one (subject, relation).
#[pyclass(name = "FactChain", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyChain {
    inner: FactChain,
}

#[pymethods]
impl PyChain {
    #[getter]
    fn subject(&self) -> &str {
        &self.inner.subject
    }

    #[getter]
    fn relation(&self) -> &str {
        &self.inner.relation
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id()
    }

    #[getter]
    fn facts(&self) -> Vec<PyFact> {
        self.inner.facts.iter().map(PyFact::from).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("FactChain({:?}, {} facts)", self.inner.id(), self.inner.len())
    }
}

/// Parse tab-separated facts. Returns the facts and `(line, message)` for
/// every line that could not be read.
#[pyfunction]
fn parse_facts(text: &str) -> (Vec<PyFact>, Vec<(usize, String)>) {
    let out = temporal_kb::parse_facts_str(text);
    (
        out.facts.iter().map(PyFact::from).collect(),
        out.errors.into_iter().map(|e| (e.line, e.message)).collect(),
    )
}

#[pyfunction]
#[pyo3(signature = (facts, first_year=1900, horizon=2028))]
fn build_chains(facts: Vec<PyFact>, first_year: i32, horizon: i32) -> PyResult<Vec<PyChain>> {
    let range = YearRange::new(first_year, horizon).map_err(py_err)?;
    let built = temporal_kb::build_chains(&core_facts(&facts)?, &range);
    Ok(built.chains.into_iter().map(|inner| PyChain { inner }).collect())
}

/// Synthetic facts for `chains` chains, fully determined by `seed`.
#[pyfunction]
#[pyo3(signature = (seed=7, chains=500))]
fn generate_corpus(seed: u64, chains: usize) -> PyResult<Vec<PyFact>> {
    let cfg = tke_core::corpus::CorpusConfig { chains, ..Default::default() };
    let facts = tke_core::corpus::generate_corpus(seed, &cfg).map_err(py_err)?;
    Ok(facts.iter().map(PyFact::from).collect())
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

/// The SE, ME and EE datasets built from a list of chains.
#[pyclass(name = "Datasets", frozen)]
struct PyDatasets {
    inner: bench::Datasets,
}

#[pymethods]
impl PyDatasets {
    fn sizes(&self) -> Vec<(String, usize)> {
        DatasetKind::ALL.iter().map(|k| (k.to_string(), self.inner.get(*k).len())).collect()
    }

    /// Records of one dataset as plain dictionaries.
    fn records<'py>(&self, py: Python<'py>, kind: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.get(named(kind, kind)?))
    }

    fn to_jsonl(&self, kind: &str) -> PyResult<String> {
        let mut buf = Vec::new();
        bench::write_dataset(&mut buf, self.inner.get(named("dataset kind", kind)?)).map_err(py_err)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Chains that did not yield a record, with the reason.
    fn skipped(&self) -> Vec<(String, String)> {
        self.inner.log.iter().map(|e| (e.chain_id.clone(), e.message.clone())).collect()
    }
}

#[pyfunction]
#[pyo3(signature = (chains, seed=7, fake_facts=true, extension_years=1, horizon=2028))]
fn build_datasets(
    chains: Vec<PyRef<'_, PyChain>>,
    seed: u64,
    fake_facts: bool,
    extension_years: i32,
    horizon: i32,
) -> PyResult<PyDatasets> {
    let chains: Vec<FactChain> = chains.iter().map(|c| c.inner.clone()).collect();
    let options = BuildOptions {
        horizon: YearRange::new(YearRange::default().first, horizon).map_err(py_err)?,
        seed,
        fake_facts,
        extension_years,
    };
    let inner = bench::build_datasets(&chains, &TemplatePack::default_pack(), &AliasTable::default(), &options, None)
        .map_err(py_err)?;
    Ok(PyDatasets { inner })
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

fn time_ref(time: &Bound<'_, PyAny>) -> PyResult<TimeRef> {
    if let Ok(year) = time.extract::<i32>() {
        return Ok(TimeRef::Year(year));
    }
    match time.extract::<String>()?.to_ascii_lowercase().as_str() {
        "current" => Ok(TimeRef::Current),
        "previous" => Ok(TimeRef::Previous),
        other => Err(PyTypeError::new_err(format!("time must be a year, 'current' or 'previous', not {other:?}"))),
    }
}

fn editor(method: &str, meto: bool) -> PyResult<EditorConfig> {
    let method: Method = method.parse().map_err(py_err)?;
    Ok(EditorConfig::new(method, meto))
}

/// Linear associative memory over seeded entity, relation and year codebooks.
#[pyclass(name = "Model")]
struct PyModel {
    inner: LamModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (entities, relations, dim=256, seed=0))]
    fn new(entities: Vec<String>, relations: Vec<String>, dim: usize, seed: u64) -> PyResult<Self> {
        let inner = LamModel::new(ModelConfig::with_dim(dim).seed(seed), entities, relations).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: persist::load_file(&path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        persist::save_file(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.config().d
    }

    fn state_hash(&self) -> String {
        self.inner.state_hash()
    }

    /// Replace the memory with exactly these facts.
    fn initialize(&mut self, facts: Vec<PyFact>) -> PyResult<()> {
        let facts: Vec<_> = core_facts(&facts)?.into_iter().map(|f| (f, None)).collect();
        self.inner.initialize_from_facts(&facts).map_err(py_err)
    }

    /// Best object and its score. `time` is a year, "current" or "previous".
    fn query(&self, subject: &str, relation: &str, time: &Bound<'_, PyAny>) -> PyResult<(String, f64)> {
        let answer = self.inner.query(&StructuredQuery::new(subject, relation, time_ref(time)?)).map_err(py_err)?;
        Ok((answer.object, answer.score))
    }

    fn predict_span(&self, subject: &str, relation: &str, object: &str) -> PyResult<(i32, i32)> {
        let span = self.inner.predict_span(subject, relation, object).map_err(py_err)?;
        Ok((span.start, span.end))
    }

    /// Replace `old` by `new` and return the edit log entries.
    #[pyo3(signature = (old, new, method="r1", meto=false))]
    fn edit<'py>(
        &mut self,
        py: Python<'py>,
        old: PyFact,
        new: PyFact,
        method: &str,
        meto: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let op = EditOp::between(&old.core()?, &new.core()?).map_err(py_err)?;
        let log = apply_edits(&mut self.inner, &[op], &editor(method, meto)?).map_err(py_err)?;
        to_py(py, &log.entries)
    }

    /// Metrics over one dataset. With `method`, each record is edited on a
    /// copy of this model between its question sets; otherwise the model is
    /// scored as it stands.
    #[pyo3(signature = (datasets, kind, method=None, meto=false))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        datasets: &PyDatasets,
        kind: &str,
        method: Option<&str>,
        meto: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let records = datasets.inner.get(named("dataset kind", kind)?);
        let aliases = AliasTable::default();
        let config = method.map(|m| editor(m, meto)).transpose()?;
        let mut counts = Vec::with_capacity(records.len());
        for rec in records {
            counts.push(match &config {
                Some(cfg) => {
                    let mut m = self.inner.clone();
                    eval_record(&mut m, rec, &aliases, |m, _, edit| {
                        apply_edits(m, std::slice::from_ref(edit), cfg).map(|_| ())
                    })
                    .map_err(py_err)?
                }
                None => score_record(&self.inner, rec, &aliases),
            });
        }
        to_py(py, &aggregate(&counts, "").map_err(py_err)?)
    }

    fn __repr__(&self) -> String {
        let books = self.inner.codebooks();
        format!(
            "Model(dim={}, entities={}, relations={})",
            self.inner.config().d,
            books.entities.ids().len(),
            books.relations.ids().len()
        )
    }
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

/// Reports of every (editor, METO) cell.
#[pyclass(name = "SuiteResult", frozen)]
struct PySuite {
    inner: SuiteOutput,
}

#[pymethods]
impl PySuite {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn config_fingerprint(&self) -> &str {
        &self.inner.config_fingerprint
    }

    /// Percentage for one cell, or None when the cell does not report it.
    fn metric(&self, method: &str, meto: bool, kind: &str, metric: &str) -> PyResult<Option<f64>> {
        let method: Method = method.parse().map_err(py_err)?;
        let kind: DatasetKind = named("dataset kind", kind)?;
        let metric: Metric = named("metric", metric)?;
        Ok(self.inner.metric(method, meto, kind, metric))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn to_markdown(&self) -> String {
        self.inner.to_markdown()
    }

    fn as_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }
}

/// Run the suite. `config` is a JSON document mirroring the run
/// configuration; the keyword arguments override it.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None, chains=None, methods=None))]
fn run_suite(
    py: Python<'_>,
    config: Option<&str>,
    seed: Option<u64>,
    chains: Option<usize>,
    methods: Option<Vec<String>>,
) -> PyResult<PySuite> {
    let mut cfg: RunConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(n) = chains {
        cfg.corpus.chains = n;
    }
    if let Some(methods) = methods {
        cfg.methods = methods.iter().map(|m| m.parse()).collect::<Result<_, _>>().map_err(py_err)?;
    }
    let inner = py.detach(|| suite::run_suite(&cfg)).map_err(py_err)?;
    Ok(PySuite { inner })
}

#[pymodule]
fn tke(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyFact>()?;
    m.add_class::<PyChain>()?;
    m.add_class::<PyDatasets>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PySuite>()?;
    m.add_function(wrap_pyfunction!(parse_facts, m)?)?;
    m.add_function(wrap_pyfunction!(build_chains, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(build_datasets, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
